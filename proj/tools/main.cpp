#include "cli.hpp"

int main(int argc, char** argv) { return nisim::cli::run(argc, argv); }
