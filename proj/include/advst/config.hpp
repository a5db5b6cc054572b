#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "advst/data.hpp"
#include "advst/trainer.hpp"

// Run configuration: a flat key = value text file (UTF-8, full-line `#`
// comments). Unknown and duplicate keys are rejected and every value is
// validated at parse time, so a config that parses is a config that runs.
// The serialized form spells out every key with defaults resolved and
// reparses to an identical configuration, which makes the snapshot written
// next to a run's outputs sufficient for an exact rerun.

namespace advst {

enum class RunMode { AdvST, AdvSTME, Erm, PixelAda };

const char* run_mode_str(RunMode m);  // advst | advst-me | erm | pixel-ada

// Dataset source: the procedural digit renderer ("synth:<n_per_class>"), an
// IDX pair ("idx:<images>:<labels>", split at the first two colons), a raw
// tensor dump ("raw:<path>"), or "none" (held-out slot only).
struct DataSpec {
    enum class Kind { Synth, Idx, Raw, None };
    Kind kind = Kind::Synth;
    std::size_t n_per_class = 0;  // synth
    std::string images, labels;   // idx
    std::string path;             // raw
};

DataSpec parse_data_spec(const std::string& text);
std::string data_spec_str(const DataSpec& spec);

struct RunConfig {
    RunMode mode = RunMode::AdvST;
    TrainConfig train;
    DataSpec train_data{DataSpec::Kind::Synth, 100};
    DataSpec heldout_data{DataSpec::Kind::Synth, 20};
    std::size_t data_limit = 0;      // record cap on loaded sets, 0 = all
    std::vector<ShiftSpec> targets;  // shifted evaluation domains, built from
                                     // the held-out set; defaulted in parse
    std::string out_dir = "out";
};

// Parses config text / a config file. Violations raise ContractError naming
// the offending line; unreadable files raise FormatError.
RunConfig parse_run_config(const std::string& text);
RunConfig load_run_config(const std::string& path);

// Full serialization, one key per line in fixed order.
std::string run_config_str(const RunConfig& cfg);
void write_run_config(const std::string& path, const RunConfig& cfg);

// Materialized datasets for one run: the training source, the held-out
// in-domain set ("indomain"), and one shifted target per spec, named by the
// spec text. Synthetic draws derive from the config seed, so equal seeds see
// equal data across modes.
struct RunData {
    Dataset train;
    Dataset heldout;                // size 0 when heldout_data is none
    std::vector<Dataset> targets;
    std::vector<Dataset> eval_domains() const;  // heldout + targets
};

RunData load_run_data(const RunConfig& cfg);

}  // namespace advst
