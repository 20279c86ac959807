#include "stabid/cli.hpp"

int main(int argc, char** argv) { return stabid::cli_main(argc, argv); }
