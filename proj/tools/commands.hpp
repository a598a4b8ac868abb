#pragma once

#include <cstdint>
#include <string>

#include "ammu/config.hpp"

namespace ammucli {

/// Settings shared by every subcommand; one seed fixes every random draw, so
/// reports are byte-identical across runs (timing fields excepted).
struct Options {
    ammu::RunSpec spec;
    bool config_given = false;
    std::uint64_t seed = 1;
    std::string out_dir = ".";
    std::string dtype = "f64";
    std::int64_t reps = 1;
    std::string inject_fault = "none";
    std::string pred_path;
    std::string truth_path;
};

int cmd_oracle(const Options& opt);
int cmd_gradcheck(const Options& opt);
int cmd_bench(const Options& opt);
int cmd_smoketrain(const Options& opt);
int cmd_metrics(const Options& opt);

}  // namespace ammucli
