// SPDX-License-Identifier: Apache-2.0
#include "dcssd/cli.hpp"

int main(int argc, char** argv) { return dcssd::cli::cli_main(argc, argv); }
