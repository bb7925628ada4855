#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "drselect/baselines.hpp"
#include "drselect/larmor.hpp"

namespace drselect::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitBackend = 3;

/// Everything one command needs. Loaded from a JSON config file, then
/// overridden by flags.
struct RunConfig {
    std::filesystem::path corpus;
    std::filesystem::path pool;
    std::string llm = "mock";  ///< "mock", "mock:SEED" or an http(s) base url
    std::filesystem::path out;
    std::uint64_t seed = 0;
    int workers = 0;           ///< 0: one per logical CPU
    std::filesystem::path queries;
    std::filesystem::path qrels;
    std::string domain = "generic";
    std::filesystem::path prompt_dir;
    std::filesystem::path msmarco_perf;
    std::string collection;
    bool force = false;

    larmor::PipelineConfig pipeline;
    baselines::QppConfig qpp;

    int llm_timeout_ms = 30000;
    int llm_max_retries = 3;
    int llm_max_in_flight = 8;
    std::string llm_api_key_env = "DRSELECT_LLM_API_KEY";
    std::string llm_model;
};

/// Applies a JSON config document on top of `cfg`. Relative paths resolve
/// against base_dir. Unknown keys are rejected.
void apply_config_json(RunConfig& cfg, const std::string& json_text, const std::filesystem::path& base_dir);

/// Runs one command; `args` excludes the program name. Returns the exit
/// code: 0 success, 2 usage or contract violation, 3 backend unavailable.
/// Human output goes to `out`, one JSON object per log event to `err`.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace drselect::cli
