#include "plcmos/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <exception>
#include <fstream>
#include <iterator>
#include <mutex>
#include <sstream>
#include <thread>

#include "plcmos/error.hpp"
#include "plcmos/features.hpp"
#include "plcmos/random.hpp"

namespace plcmos {

namespace {

std::string fixed(double v, int digits = 6)
{
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p)
{
  std::filesystem::path path{p};
  return path.is_relative() ? base / path : path;
}

} // namespace

std::string read_text_file(const std::filesystem::path& path)
{
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw Error("cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

std::vector<std::uint8_t> read_binary_file(const std::filesystem::path& path)
{
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw Error("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_text_file(const std::filesystem::path& path, std::string_view text)
{
  std::ofstream out(path, std::ios::binary);
  if (!out)
    throw Error("cannot write " + path.string());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
}

void write_binary_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes)
{
  std::ofstream out(path, std::ios::binary);
  if (!out)
    throw Error("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

PacketTrace read_trace(const std::filesystem::path& path)
{
  const auto text = read_text_file(path);
  try
  {
    return parse_trace(text);
  }
  catch (const ParseError& e)
  {
    throw ParseError(e.line(), path.string() + ": " + e.what());
  }
  catch (const StructureError& e)
  {
    throw StructureError(path.string() + ": " + e.what());
  }
}

ModelWeights<float> read_weights(const std::filesystem::path& path)
{
  if (!std::filesystem::exists(path))
    throw Error("weight file " + path.string() + " does not exist");
  return load_weights(read_binary_file(path));
}

void parallel_for(std::size_t n, std::size_t jobs, const std::function<void(std::size_t)>& fn)
{
  if (jobs <= 1 || n <= 1)
  {
    for (std::size_t i = 0; i < n; ++i)
      fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  std::vector<std::jthread> workers;
  for (std::size_t w = 0; w < std::min(jobs, n); ++w)
    workers.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++)
      {
        try
        {
          fn(i);
        }
        catch (...)
        {
          std::lock_guard lock{failure_mutex};
          if (!failure)
            failure = std::current_exception();
        }
      }
    });
  workers.clear();
  if (failure)
    std::rethrow_exception(failure);
}

std::vector<TraceSegment> collect_candidates(const std::vector<std::filesystem::path>& traces,
                                             double segment_ms,
                                             std::uint64_t seed,
                                             std::size_t segments_per_trace)
{
  std::vector<TraceSegment> out;
  for (std::size_t i = 0; i < traces.size(); ++i)
  {
    const auto trace = read_trace(traces[i]);
    SegmentOptions options;
    options.source_id = traces[i].string();
    options.target_count = segments_per_trace;
    auto segments = segment_trace(trace, segment_ms, derive_seed(seed, {i}), options);
    std::move(segments.begin(), segments.end(), std::back_inserter(out));
  }
  return out;
}

std::vector<TraceSegment> segments_from_manifest(const nlohmann::json& manifest, const std::filesystem::path& trace_root)
{
  std::map<std::string, PacketTrace> sources;
  std::vector<TraceSegment> out;
  try
  {
    for (const auto& entry : manifest.at("segments"))
    {
      const auto source = entry.at("source_id").get<std::string>();
      auto it = sources.find(source);
      if (it == sources.end())
        it = sources.emplace(source, read_trace(resolve(trace_root, source))).first;
      const auto start = entry.at("start_packet").get<std::size_t>();
      const auto count = entry.at("packet_count").get<std::size_t>();
      out.push_back({source, start, it->second.slice(start, count)});
    }
  }
  catch (const nlohmann::json::exception& e)
  {
    throw StructureError(std::string{"malformed sample manifest: "} + e.what());
  }
  return out;
}

DegradedClip degrade_clip(const AudioClip& clean, const TraceSegment& segment, FillMode mode, std::uint64_t seed)
{
  const auto length = segment.packets.size() * samples_per_packet(segment.packets.packet_ms());
  return apply_trace(cut_segment(clean, length, seed), segment, mode);
}

std::vector<std::string> degrade_files(const std::vector<DegradeTask>& tasks, FillMode mode, std::size_t jobs)
{
  std::vector<std::string> errors(tasks.size());
  parallel_for(tasks.size(), jobs, [&](std::size_t i) {
    const auto& t = tasks[i];
    try
    {
      write_wav(t.output, degrade_clip(read_wav(t.clean), t.segment, mode, t.seed).audio);
    }
    catch (const Error& e)
    {
      errors[i] = e.what();
    }
  });
  return errors;
}

std::vector<ScoreRow> score_files(const std::vector<std::string>& clips,
                                  const ModelWeights<float>& weights,
                                  std::uint64_t seed,
                                  std::size_t jobs)
{
  std::vector<ScoreRow> rows(clips.size());
  parallel_for(clips.size(), jobs, [&](std::size_t i) {
    rows[i].clip_path = clips[i];
    try
    {
      rows[i].result = infer_mos(logpow_spectrogram(read_wav(clips[i])), weights, derive_seed(seed, {i}));
    }
    catch (const Error& e)
    {
      rows[i].error = e.what();
    }
  });
  return rows;
}

std::string score_table_csv(const std::vector<ScoreRow>& rows)
{
  std::string out = "clip_path,mos,per_rater_stddev\n";
  for (const auto& r : rows)
    if (r.result)
      out += r.clip_path + "," + fixed(r.result->mos) + "," + fixed(r.result->per_rater_stddev()) + "\n";
  return out;
}

std::map<std::string, double> parse_score_table(std::string_view csv)
{
  std::map<std::string, double> out;
  std::istringstream in{std::string{csv}};
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line))
  {
    ++line_no;
    if (!line.empty() && line.back() == '\r')
      line.pop_back();
    if (line.empty() || line_no == 1)
      continue;
    const auto a = line.find(',');
    if (a == std::string::npos)
      throw ParseError(line_no, "expected 'clip_path,score[,...]'");
    const auto b = line.find(',', a + 1);
    try
    {
      out[line.substr(0, a)] = std::stod(line.substr(a + 1, b == std::string::npos ? std::string::npos : b - a - 1));
    }
    catch (const std::exception&)
    {
      throw ParseError(line_no, "invalid score");
    }
  }
  return out;
}

EvaluationReport evaluate_scores(const std::vector<ScorePair>& pairs, std::uint64_t bootstrap_seed)
{
  if (pairs.size() < 2)
    throw InvalidArgument("evaluation needs at least two files, got " + std::to_string(pairs.size()));
  EvaluationReport report;
  report.files = pairs;
  const auto files = aggregate(pairs, AggregationLevel::filewise);
  report.filewise = correlation_report(files.predicted, files.reference, derive_seed(bootstrap_seed, {0}));
  report.models = aggregate(pairs, AggregationLevel::modelwise);
  if (report.models.labels.size() < 2)
  {
    report.modelwise_note = "modelwise correlation needs at least two models";
  }
  else
  {
    try
    {
      report.modelwise = correlation_report(report.models.predicted, report.models.reference, derive_seed(bootstrap_seed, {1}));
    }
    catch (const UndefinedCorrelation& e)
    {
      report.modelwise_note = e.what();
    }
  }
  return report;
}

std::vector<ScorePair> reference_pairs(const std::vector<VoteRecord>& records)
{
  std::vector<ScorePair> pairs;
  std::vector<std::size_t> counts;
  std::map<std::string, std::size_t> index;
  for (const auto& r : records)
  {
    if (r.split != Split::eval)
      continue;
    auto [it, fresh] = index.emplace(r.clip_path, pairs.size());
    if (fresh)
    {
      pairs.push_back({r.clip_path, r.model_tag, 0.0, 0.0});
      counts.push_back(0);
    }
    else if (pairs[it->second].model_tag != r.model_tag)
    {
      throw StructureError("clip " + r.clip_path + " appears under two model tags");
    }
    pairs[it->second].reference_mos += r.rating;
    ++counts[it->second];
  }
  for (std::size_t i = 0; i < pairs.size(); ++i)
    pairs[i].reference_mos /= static_cast<double>(counts[i]);
  return pairs;
}

EvaluationReport evaluate_dataset(const std::vector<VoteRecord>& records,
                                  const std::filesystem::path& base_dir,
                                  const ModelWeights<float>& weights,
                                  std::uint64_t seed,
                                  std::size_t jobs)
{
  auto pairs = reference_pairs(records);
  if (pairs.size() < 2)
    throw InvalidArgument("evaluation needs at least two eval files, got " + std::to_string(pairs.size()));
  std::vector<std::string> paths;
  for (const auto& p : pairs)
    paths.push_back(resolve(base_dir, p.file_id).string());
  const auto rows = score_files(paths, weights, seed, jobs);
  for (std::size_t i = 0; i < rows.size(); ++i)
  {
    if (!rows[i].result)
      throw Error("cannot score " + pairs[i].file_id + ": " + rows[i].error);
    pairs[i].predicted = rows[i].result->mos;
  }
  return evaluate_scores(pairs, seed);
}

EvaluationReport evaluate_predictions(const std::vector<VoteRecord>& records, const std::map<std::string, double>& predictions)
{
  auto pairs = reference_pairs(records);
  for (auto& p : pairs)
  {
    const auto it = predictions.find(p.file_id);
    if (it == predictions.end())
      throw InvalidArgument("no prediction for eval clip " + p.file_id);
    p.predicted = it->second;
  }
  return evaluate_scores(pairs);
}

nlohmann::json to_json(const EvaluationReport& r)
{
  nlohmann::json files = nlohmann::json::array();
  for (const auto& p : r.files)
    files.push_back({{"file_id", p.file_id}, {"model_tag", p.model_tag}, {"predicted", p.predicted}, {"reference_mos", p.reference_mos}});
  nlohmann::json models = nlohmann::json::array();
  for (std::size_t i = 0; i < r.models.labels.size(); ++i)
  {
    const auto n = std::count_if(r.files.begin(), r.files.end(), [&](const ScorePair& p) { return p.model_tag == r.models.labels[i]; });
    models.push_back({{"model_tag", r.models.labels[i]}, {"n_files", n}, {"predicted_mean", r.models.predicted[i]},
                      {"reference_mean", r.models.reference[i]}});
  }
  nlohmann::json j = {{"filewise", to_json(r.filewise)}, {"models", std::move(models)}, {"files", std::move(files)}};
  j["modelwise"] = r.modelwise ? to_json(*r.modelwise) : nlohmann::json(nullptr);
  if (!r.modelwise_note.empty())
    j["modelwise_note"] = r.modelwise_note;
  return j;
}

std::string render_table(const EvaluationReport& r, std::string_view metric_name)
{
  char line[256];
  std::string out;
  std::snprintf(line, sizeof line, "%-16s %-26s %-26s\n", "", "Filewise", "Modelwise");
  out += line;
  std::snprintf(line, sizeof line, "%-16s %-8s %-8s %-8s %-8s %-8s %-8s\n", "Metric", "PCC", "SRCC", "MAE", "PCC", "SRCC", "MAE");
  out += line;
  const std::string name{metric_name};
  const auto& f = r.filewise;
  if (r.modelwise)
  {
    const auto& m = *r.modelwise;
    std::snprintf(line, sizeof line, "%-16s %-8.3f %-8.3f %-8.3f %-8.3f %-8.3f %-8.3f\n", name.c_str(), f.pcc, f.srcc, f.mae, m.pcc, m.srcc, m.mae);
  }
  else
  {
    std::snprintf(line, sizeof line, "%-16s %-8.3f %-8.3f %-8.3f %-8s %-8s %-8s\n", name.c_str(), f.pcc, f.srcc, f.mae, "-", "-", "-");
  }
  out += line;
  std::snprintf(line, sizeof line, "\nfiles: %zu  models: %zu\n", f.n, r.models.labels.size());
  out += line;
  if (f.pcc_ci)
  {
    std::snprintf(line, sizeof line, "filewise PCC 95%% CI: [%.3f, %.3f]  SRCC 95%% CI: [%.3f, %.3f]\n", f.pcc_ci->low,
                  f.pcc_ci->high, f.srcc_ci->low, f.srcc_ci->high);
    out += line;
  }
  if (r.modelwise && r.modelwise->pcc_ci)
  {
    std::snprintf(line, sizeof line, "modelwise PCC 95%% CI: [%.3f, %.3f]  SRCC 95%% CI: [%.3f, %.3f]\n",
                  r.modelwise->pcc_ci->low, r.modelwise->pcc_ci->high, r.modelwise->srcc_ci->low, r.modelwise->srcc_ci->high);
    out += line;
  }
  if (!r.modelwise_note.empty())
    out += "note: " + r.modelwise_note + "\n";
  return out;
}

std::string modelwise_csv(const EvaluationReport& r)
{
  std::string out = "model_tag,predicted,reference\n";
  for (std::size_t i = 0; i < r.models.labels.size(); ++i)
    out += r.models.labels[i] + "," + fixed(r.models.predicted[i]) + "," + fixed(r.models.reference[i]) + "\n";
  return out;
}

nlohmann::json to_json(const RunManifest& m)
{
  return {
    {"command", m.command},
    {"argv", m.argv},
    {"config", m.config},
    {"seeds", m.seeds},
    {"inputs", m.inputs},
    {"outputs", m.outputs},
    {"tool_version", m.tool_version},
    {"weight_format_version", weight_format_version},
    {"started_utc", m.started_utc},
    {"wall_clock_seconds", m.wall_clock_seconds},
    {"exit_code", m.exit_code},
  };
}

RunManifest run_manifest_from_json(const nlohmann::json& j)
{
  try
  {
    RunManifest m;
    m.command = j.at("command").get<std::string>();
    m.argv = j.at("argv").get<std::vector<std::string>>();
    m.config = j.value("config", nlohmann::json::object());
    m.seeds = j.value("seeds", nlohmann::json::object());
    m.inputs = j.value("inputs", std::vector<std::string>{});
    m.outputs = j.value("outputs", std::vector<std::string>{});
    m.tool_version = j.value("tool_version", std::string{});
    m.started_utc = j.value("started_utc", std::string{});
    m.wall_clock_seconds = j.value("wall_clock_seconds", 0.0);
    m.exit_code = j.value("exit_code", 0);
    return m;
  }
  catch (const nlohmann::json::exception& e)
  {
    throw InvalidArgument(std::string{"malformed run manifest: "} + e.what());
  }
}

} // namespace plcmos
