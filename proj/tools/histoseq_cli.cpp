#include "histoseq/cli.hpp"

int main(int argc, char** argv) { return histoseq::cli::run(argc, argv); }
