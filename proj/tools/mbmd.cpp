#include "mbmd/cli.hpp"

int main(int argc, char** argv) { return mbmd::cli_main(argc, argv); }
