#include "divseq/cli.hpp"

int main(int argc, char** argv) { return divseq::cli::run(argc, argv); }
