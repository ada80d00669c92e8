#include "disarm/cli.hpp"

int main(int argc, char** argv) { return disarm::cli::run(argc, argv); }
