#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "ammu/model.hpp"

namespace ammu {

/// Settings shared by the command-line tools, read from a key = value file.
/// Lines are `key = value`, blank, or `#` comments. Unknown and duplicate
/// keys are errors. Recognized keys (defaults in parentheses):
///
///   input_h, input_w       (64, 64)    input extents, multiples of 32
///   encoder_channels       (16,32,64,128)  four comma-separated widths
///   level_channels         (64,32)     two granular-level widths
///   fusion_channels        (32)
///   head_hidden            (384)
///   classes                (3)
///   heads                  (4,2,2)     deepest level first
///   granularity            (block4)    element | block4
///   renormalize            (true)
///   train_steps            (500)
///   batch_size             (1)
///   base_lr                (1e-4)
///   lr_power               (0.9)
///   weight_decay           (0.01)
///   oracle_trials          (20)
///   bench_sizes            (32,64,128,256)  square grid edges to sweep
///   bench_channels         (64)
///   bench_window           (8)
///   bench_anchor           (16)        deepest grid edge in the cost model
struct RunSpec {
    ModelConfig model;
    std::int64_t train_steps = 500;
    std::int64_t batch_size = 1;
    double base_lr = 1e-4;
    double lr_power = 0.9;
    double weight_decay = 0.01;
    std::int64_t oracle_trials = 20;
    std::vector<std::int64_t> bench_sizes{32, 64, 128, 256};
    std::int64_t bench_channels = 64;
    std::int64_t bench_window = 8;
    std::int64_t bench_anchor = 16;

    void validate() const;
};

RunSpec parse_run_spec(std::istream& in);
RunSpec load_run_spec(const std::string& path);

}  // namespace ammu
