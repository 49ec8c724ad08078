#pragma once

// Batch operations composed from the library modules; the CLI is a thin
// layer over these.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "plcmos/degrade.hpp"
#include "plcmos/metrics.hpp"
#include "plcmos/model.hpp"
#include "plcmos/traces.hpp"
#include "plcmos/training.hpp"

namespace plcmos {

inline constexpr std::string_view tool_version = PLCMOS_VERSION;

std::string read_text_file(const std::filesystem::path& path);
std::vector<std::uint8_t> read_binary_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, std::string_view text);
void write_binary_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

PacketTrace read_trace(const std::filesystem::path& path);
ModelWeights<float> read_weights(const std::filesystem::path& path);

/// Runs fn(i) for i in [0, n) on up to `jobs` threads. Exceptions are
/// rethrown after all workers finish.
void parallel_for(std::size_t n, std::size_t jobs, const std::function<void(std::size_t)>& fn);

/// Segments every trace and pools the candidates.
std::vector<TraceSegment> collect_candidates(const std::vector<std::filesystem::path>& traces,
                                             double segment_ms,
                                             std::uint64_t seed,
                                             std::size_t segments_per_trace);

/// Rebuilds the segments listed in a sample manifest from their sources.
/// Relative source ids resolve against trace_root.
std::vector<TraceSegment> segments_from_manifest(const nlohmann::json& manifest, const std::filesystem::path& trace_root);

/// Cuts a trace-length excerpt of clean audio and applies the trace.
DegradedClip degrade_clip(const AudioClip& clean, const TraceSegment& segment, FillMode mode, std::uint64_t seed);

struct DegradeTask
{
  std::filesystem::path clean;
  TraceSegment segment;
  std::filesystem::path output;
  std::uint64_t seed = 0;
};

/// Runs the tasks on up to `jobs` threads and writes each output WAV.
/// Returns one error message per task, empty on success, in task order.
std::vector<std::string> degrade_files(const std::vector<DegradeTask>& tasks, FillMode mode, std::size_t jobs = 1);

struct ScoreRow
{
  std::string clip_path;
  std::optional<MosResult> result;
  std::string error;
};

/// Per-clip seeds are derived from (seed, input index).
std::vector<ScoreRow> score_files(const std::vector<std::string>& clips,
                                  const ModelWeights<float>& weights,
                                  std::uint64_t seed,
                                  std::size_t jobs = 1);

/// `clip_path,mos,per_rater_stddev` for the rows that scored.
std::string score_table_csv(const std::vector<ScoreRow>& rows);

/// Reads a score table back as clip_path -> predicted value.
std::map<std::string, double> parse_score_table(std::string_view csv);

struct EvaluationReport
{
  std::vector<ScorePair> files;
  Aggregated models;
  CorrelationReport filewise;
  std::optional<CorrelationReport> modelwise;
  std::string modelwise_note;
};

/// Filewise and modelwise agreement; needs at least two files.
EvaluationReport evaluate_scores(const std::vector<ScorePair>& pairs, std::uint64_t bootstrap_seed = 0);

/// Per-file reference MOS (mean of votes) for the eval split.
std::vector<ScorePair> reference_pairs(const std::vector<VoteRecord>& records);

/// Scores every eval clip and compares with its reference MOS.
EvaluationReport evaluate_dataset(const std::vector<VoteRecord>& records,
                                  const std::filesystem::path& base_dir,
                                  const ModelWeights<float>& weights,
                                  std::uint64_t seed,
                                  std::size_t jobs = 1);

/// As evaluate_dataset, with predictions supplied by an external metric.
EvaluationReport evaluate_predictions(const std::vector<VoteRecord>& records, const std::map<std::string, double>& predictions);

nlohmann::json to_json(const EvaluationReport& report);
/// Aligned plain-text table in the filewise/modelwise layout.
std::string render_table(const EvaluationReport& report, std::string_view metric_name);
/// Modelwise points for plotting: `model_tag,predicted,reference`.
std::string modelwise_csv(const EvaluationReport& report);

/// Record of one tool invocation.
struct RunManifest
{
  std::string command;
  std::vector<std::string> argv;
  nlohmann::json config = nlohmann::json::object();
  nlohmann::json seeds = nlohmann::json::object();
  std::vector<std::string> inputs;
  std::vector<std::string> outputs;
  std::string tool_version{plcmos::tool_version};
  std::string started_utc;
  double wall_clock_seconds = 0.0;
  int exit_code = 0;
};

nlohmann::json to_json(const RunManifest& m);
RunManifest run_manifest_from_json(const nlohmann::json& j);

} // namespace plcmos
