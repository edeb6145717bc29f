#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "dbr/config.hpp"

namespace dbr {

enum class StageId { GenData, TrainId, ExtractShortcuts, TrainBias, TrainDebias, Eval, Analyze };

const char* stage_name(StageId id);
std::optional<StageId> stage_from_name(const std::string& name);
const std::vector<StageId>& all_stages();

// One completed stage as recorded in manifest.json: the fingerprint of the
// config keys the stage depends on plus content hashes of its input and
// output files (paths relative to the run directory).
struct StageRecord {
    std::string config_fingerprint;
    std::map<std::string, std::string> inputs;
    std::map<std::string, std::string> outputs;
};

struct Manifest {
    std::map<std::string, StageRecord> stages;
    std::string failed_stage;  // last stage that threw, empty when none
    std::string failure_error;

    static Manifest load(const std::string& path);  // missing file -> empty manifest
    void save(const std::string& path) const;
};

uint64_t hash_file(const std::string& path);
std::string hash_hex(uint64_t h);

// Relative run_dir values resolve against $DBR_RUN_ROOT when set, else the
// current working directory. Absolute paths pass through.
std::string resolve_run_dir(const std::string& configured);

// Exclusive-create lock file guarding a run directory; a second holder fails
// with StageError. Removed on destruction.
class RunLock {
  public:
    explicit RunLock(const std::string& run_dir);
    ~RunLock();
    RunLock(const RunLock&) = delete;
    RunLock& operator=(const RunLock&) = delete;

  private:
    std::string path_;
};

struct PipelineOptions {
    // Re-execute even when the manifest says the stage is up to date.
    bool force = false;
    // Verify inputs against the hashes recorded by their producing stages and
    // refuse (StaleArtifactError) on mismatch. Set for single-stage runs;
    // a full run instead re-executes anything out of date.
    bool strict_inputs = false;
    bool quiet = false;
};

class Pipeline {
  public:
    Pipeline(Config config, std::string run_dir);

    const std::string& run_dir() const { return dir_; }
    const Config& config() const { return config_; }

    // Config keys whose values a stage's behavior depends on.
    static std::vector<std::string> stage_config_keys(StageId id);
    // Input / output files of a stage, relative to the run directory.
    static std::vector<std::string> stage_inputs(StageId id);
    static std::vector<std::string> stage_outputs(StageId id);

    // Runs one stage, or skips it when the manifest shows it is up to date
    // (matching fingerprint, matching input hashes, outputs present).
    // Returns true when the stage body actually ran.
    bool run_stage(StageId id, const PipelineOptions& opts);

    // All stages in order, then the report. Caller holds the RunLock.
    void run_all(const PipelineOptions& opts);

    // report.jsonl + summary.md, regenerated deterministically from on-disk
    // artifacts (no timestamps, no machine identifiers).
    void write_report();

    // Effective config snapshot at <run_dir>/config.ini.
    void write_config_snapshot() const;

  private:
    std::string path(const std::string& rel) const;
    std::string fingerprint(StageId id) const;
    void execute_stage(StageId id);
    void verify_inputs_fresh(StageId id) const;

    void stage_gen_data();
    void stage_train_id();
    void stage_extract_shortcuts();
    void stage_train_bias();
    void stage_train_debias();
    void stage_eval();
    void stage_analyze();

    Config config_;
    std::string dir_;
    Manifest manifest_;
};

}  // namespace dbr
