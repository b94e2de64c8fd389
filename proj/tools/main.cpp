#include "nairstd/cli.hpp"

int main(int argc, char** argv) { return nairstd::cli_main(argc, argv); }
