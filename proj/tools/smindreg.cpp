// smindreg - command-line front end.

#include "smind/cli.hpp"

int main(int argc, char **argv) { return smind::run_cli(argc, argv); }
