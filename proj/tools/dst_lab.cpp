#include "dstlab/cli.hpp"

int main(int argc, char** argv) { return dstlab::cli::main_entry(argc, argv); }
