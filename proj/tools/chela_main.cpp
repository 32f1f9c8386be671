// SPDX-License-Identifier: Apache-2.0
#include "chela/cli.hpp"

int main(int argc, char** argv) { return chela::cli::cli_main(argc, argv); }
