#include "wdnet/cli.hpp"

int main(int argc, char** argv) { return wdnet::cli_main(argc, argv); }
