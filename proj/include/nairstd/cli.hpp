#pragma once

namespace nairstd {

// Full command-line entry point (subcommands: synth, train, eval, coverage,
// build-hard, ablate-downsample, plot, dump-config). Exit codes: 0 success,
// 2 config error, 3 data error, 4 checkpoint error.
int cli_main(int argc, char** argv);

}  // namespace nairstd
