#include "seqorder/cli.hpp"

int main(int argc, char** argv) { return seqorder::cli::dispatch(argc, argv); }
