#include "commands.hpp"

#include <algorithm>
#include <cstdio>
#include <iostream>
#include <memory>
#include <span>

#include "plcmos/error.hpp"
#include "plcmos/random.hpp"

namespace plcmos::cli {

nlohmann::json Session::section(const char* name) const
{
  if (config.contains(name))
  {
    if (!config.at(name).is_object())
      throw InvalidArgument(std::string{"config section '"} + name + "' must be an object");
    return config.at(name);
  }
  return nlohmann::json::object();
}

namespace {

template <class T>
void put(nlohmann::json& j, const char* key, const std::optional<T>& value)
{
  if (value)
    j[key] = *value;
}

void emit(Session& s, const std::string& path, std::string_view text)
{
  if (path.empty() || path == "-")
  {
    std::cout << text << std::flush;
    return;
  }
  write_text_file(path, text);
  s.manifest.outputs.push_back(path);
}

void set_primary(Session& s, const std::string& path)
{
  if (!path.empty() && path != "-")
    s.primary_output = path;
}

/// Directories expand to their *.plctrace files in name order.
std::vector<std::filesystem::path> expand_traces(const std::vector<std::string>& inputs)
{
  std::vector<std::filesystem::path> out;
  for (const auto& in : inputs)
  {
    if (std::filesystem::is_directory(in))
    {
      std::vector<std::filesystem::path> found;
      for (const auto& e : std::filesystem::directory_iterator(in))
        if (e.is_regular_file() && e.path().extension() == ".plctrace")
          found.push_back(e.path());
      std::sort(found.begin(), found.end());
      out.insert(out.end(), found.begin(), found.end());
    }
    else
    {
      out.emplace_back(in);
    }
  }
  return out;
}

ModelConfig model_config(const Session& s, bool tiny, const nlohmann::json& overrides)
{
  auto j = s.section("model");
  j.update(overrides);
  return model_config_from_json(j, tiny ? ModelConfig::tiny() : ModelConfig{});
}

void add_model_flags(CLI::App* sub, bool& tiny, std::optional<std::size_t>& gru_hidden, std::optional<std::size_t>& proj_kernel_w)
{
  sub->add_flag("--tiny", tiny, "Start from the tiny test configuration");
  sub->add_option("--gru-hidden", gru_hidden, "GRU hidden size");
  sub->add_option("--proj-kernel-w", proj_kernel_w, "Projection kernel width in frames");
}

std::string format_csv_row(const std::vector<std::string>& cells)
{
  std::string out;
  for (std::size_t i = 0; i < cells.size(); ++i)
    out += (i ? "," : "") + cells[i];
  return out + "\n";
}

std::string num(double v)
{
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

// trace-synth ---------------------------------------------------------------

void add_trace_synth(CLI::App& app, std::map<const CLI::App*, Command>& commands)
{
  struct Opts
  {
    std::optional<double> p_gb, p_bg, loss_bad, loss_good;
    std::size_t packets = 3000;
    double packet_ms = default_packet_ms;
    std::size_t count = 1;
    std::string output;
  };
  auto o = std::make_shared<Opts>();
  auto* sub = app.add_subcommand("trace-synth", "Generate Gilbert-model packet traces");
  sub->add_option("--p-gb", o->p_gb, "Good to bad transition probability");
  sub->add_option("--p-bg", o->p_bg, "Bad to good transition probability");
  sub->add_option("--loss-bad", o->loss_bad, "Loss probability in the bad state");
  sub->add_option("--loss-good", o->loss_good, "Loss probability in the good state");
  sub->add_option("--packets", o->packets, "Packets per trace")->check(CLI::PositiveNumber);
  sub->add_option("--packet-ms", o->packet_ms, "Packet duration in ms")->check(CLI::PositiveNumber);
  sub->add_option("--count", o->count, "Number of traces; more than one writes a directory")->check(CLI::PositiveNumber);
  sub->add_option("-o,--output", o->output, "Output trace file, or directory when --count > 1")->required();

  commands[sub] = [o](Session& s) {
    auto j = s.section("gilbert");
    put(j, "p_good_to_bad", o->p_gb);
    put(j, "p_bad_to_good", o->p_bg);
    put(j, "loss_in_bad", o->loss_bad);
    put(j, "loss_in_good", o->loss_good);
    auto params = gilbert_params_from_json(j);
    params.seed = s.seed_or(params.seed);
    s.manifest.config = {{"gilbert", to_json(params)}, {"packets", o->packets}, {"packet_ms", o->packet_ms}, {"count", o->count}};
    s.manifest.seeds = {{"gilbert", params.seed}};
    set_primary(s, o->output);

    if (o->count == 1)
    {
      emit(s, o->output, format_trace(synth_gilbert(params, o->packets, o->packet_ms)));
      return int{exit_ok};
    }
    std::filesystem::create_directories(o->output);
    for (std::size_t i = 0; i < o->count; ++i)
    {
      auto p = params;
      p.seed = derive_seed(params.seed, {i});
      char name[32];
      std::snprintf(name, sizeof name, "trace_%04zu.plctrace", i);
      emit(s, (std::filesystem::path(o->output) / name).string(), format_trace(synth_gilbert(p, o->packets, o->packet_ms)));
    }
    return int{exit_ok};
  };
}

// trace-sample --------------------------------------------------------------

void add_trace_sample(CLI::App& app, std::map<const CLI::App*, Command>& commands)
{
  struct Opts
  {
    std::vector<std::string> traces;
    std::optional<std::string> mode;
    std::optional<double> segment_ms;
    std::optional<std::size_t> buckets, per_bucket, long_total;
    std::optional<std::vector<std::size_t>> heavy;
    std::size_t segments_per_trace = 0;
    std::string output;
  };
  auto o = std::make_shared<Opts>();
  auto* sub = app.add_subcommand("trace-sample", "Segment traces and draw a stratified sample");
  sub->add_option("traces", o->traces, "Trace files or directories of *.plctrace")->required();
  sub->add_option("--mode", o->mode, "basic, heavy_loss or long_bursts")->check(CLI::IsMember({"basic", "heavy_loss", "long_bursts"}));
  sub->add_option("--segment-ms", o->segment_ms, "Segment duration in ms");
  sub->add_option("--buckets", o->buckets, "Loss-quantile bucket count");
  sub->add_option("--per-bucket", o->per_bucket, "Segments per bucket in basic mode");
  sub->add_option("--heavy-per-bucket", o->heavy, "Segments per bucket for the three heavy-loss subsets")->expected(3);
  sub->add_option("--long-total", o->long_total, "Segments drawn in long_bursts mode");
  sub->add_option("--segments-per-trace", o->segments_per_trace, "Candidate windows per trace (0: one per window length)");
  sub->add_option("-o,--output", o->output, "Sample manifest (JSON)")->required();

  commands[sub] = [o](Session& s) {
    auto j = s.section("sampling");
    put(j, "mode", o->mode);
    put(j, "segment_ms", o->segment_ms);
    put(j, "bucket_count", o->buckets);
    put(j, "per_bucket", o->per_bucket);
    put(j, "heavy_per_bucket", o->heavy);
    put(j, "long_burst_total", o->long_total);
    auto spec = sampling_spec_from_json(j);
    spec.rng_seed = s.seed_or(spec.rng_seed);
    const auto segment_seed = derive_seed(spec.rng_seed, {0});
    s.manifest.config = {{"sampling", to_json(spec)}, {"segments_per_trace", o->segments_per_trace}};
    s.manifest.seeds = {{"sampling", spec.rng_seed}, {"segmentation", segment_seed}};
    set_primary(s, o->output);

    const auto traces = expand_traces(o->traces);
    for (const auto& t : traces)
      s.manifest.inputs.push_back(t.string());
    const auto candidates = collect_candidates(traces, spec.segment_ms, segment_seed, o->segments_per_trace);
    if (candidates.empty())
      throw InvalidArgument("no candidate segments with losses in the given traces");
    const auto result = stratified_sample(candidates, spec);
    emit(s, o->output, sample_manifest(result, spec).dump(2) + "\n");

    std::cerr << "candidates: " << candidates.size() << "  selected: " << result.selected.size() << "\n";
    for (const auto& sf : result.shortfalls)
      std::cerr << "warning: bucket " << sf.bucket << " has " << sf.available << " of " << sf.requested << " requested segments\n";
    return (s.strict && !result.shortfalls.empty()) ? int{exit_partial} : int{exit_ok};
  };
}

// trace-stats ---------------------------------------------------------------

void add_trace_stats(CLI::App& app, std::map<const CLI::App*, Command>& commands)
{
  struct Opts
  {
    std::vector<std::string> traces;
    std::string manifest;
    std::string trace_root;
    std::string output;
  };
  auto o = std::make_shared<Opts>();
  auto* sub = app.add_subcommand("trace-stats", "Loss and burst statistics per trace or manifest segment");
  sub->add_option("traces", o->traces, "Trace files or directories");
  sub->add_option("--manifest", o->manifest, "Sample manifest whose segments to describe");
  sub->add_option("--trace-root", o->trace_root, "Directory that relative source ids resolve against");
  sub->add_option("-o,--output", o->output, "Output CSV (default stdout)");

  commands[sub] = [o](Session& s) {
    if (o->traces.empty() == o->manifest.empty())
      throw InvalidArgument("give trace files or --manifest, not both");
    set_primary(s, o->output);
    std::vector<TraceSegment> segments;
    if (!o->manifest.empty())
    {
      s.manifest.inputs.push_back(o->manifest);
      segments = segments_from_manifest(nlohmann::json::parse(read_text_file(o->manifest)), o->trace_root);
    }
    else
    {
      for (const auto& t : expand_traces(o->traces))
      {
        s.manifest.inputs.push_back(t.string());
        auto trace = read_trace(t);
        segments.push_back({t.string(), 0, std::move(trace)});
      }
    }
    std::string csv = "source_id,start_packet,packets,loss_percent,max_burst_ms,median_burst_ms,burst_count\n";
    for (const auto& seg : segments)
    {
      const auto st = burst_stats(seg);
      csv += format_csv_row({seg.source_id, std::to_string(seg.start_packet), std::to_string(seg.packets.size()),
                             num(st.loss_percent), num(st.max_burst_ms), num(st.median_burst_ms), std::to_string(st.burst_count)});
    }
    emit(s, o->output, csv);
    return int{exit_ok};
  };
}

// degrade -------------------------------------------------------------------

void add_degrade(CLI::App& app, std::map<const CLI::App*, Command>& commands)
{
  struct Opts
  {
    std::vector<std::string> clean;
    std::string segments;
    std::string trace;
    std::string trace_root;
    std::string mode = "zero";
    std::string out_dir;
  };
  auto o = std::make_shared<Opts>();
  auto* sub = app.add_subcommand("degrade", "Apply trace segments to clean audio");
  sub->add_option("clean", o->clean, "Clean 16 kHz mono WAV files, used round-robin")->required();
  sub->add_option("--segments", o->segments, "Sample manifest listing the segments");
  sub->add_option("--trace", o->trace, "Single trace file applied whole");
  sub->add_option("--trace-root", o->trace_root, "Directory that relative source ids resolve against");
  sub->add_option("--mode", o->mode, "zero or oracle")->check(CLI::IsMember({"zero", "oracle"}));
  sub->add_option("--out-dir", o->out_dir, "Output directory")->required();

  commands[sub] = [o](Session& s) {
    if (o->segments.empty() == o->trace.empty())
      throw InvalidArgument("give exactly one of --segments or --trace");
    const auto mode = fill_mode_from_string(o->mode);
    std::vector<TraceSegment> segments;
    if (!o->segments.empty())
    {
      s.manifest.inputs.push_back(o->segments);
      segments = segments_from_manifest(nlohmann::json::parse(read_text_file(o->segments)), o->trace_root);
    }
    else
    {
      s.manifest.inputs.push_back(o->trace);
      segments.push_back({o->trace, 0, read_trace(o->trace)});
    }
    for (const auto& c : o->clean)
      s.manifest.inputs.push_back(c);

    const auto base_seed = s.seed_or(0);
    s.manifest.config = {{"fill_mode", o->mode}, {"segments", segments.size()}};
    s.manifest.seeds = {{"cut", base_seed}};
    std::filesystem::create_directories(o->out_dir);

    std::vector<DegradeTask> tasks;
    for (std::size_t i = 0; i < segments.size(); ++i)
    {
      char name[32];
      std::snprintf(name, sizeof name, "degraded_%05zu.wav", i);
      tasks.push_back({o->clean[i % o->clean.size()], segments[i], std::filesystem::path(o->out_dir) / name, derive_seed(base_seed, {i})});
    }
    const auto errors = degrade_files(tasks, mode, s.jobs);

    std::string listing = "output_path,clean_path,source_id,start_packet,fill_mode\n";
    int code = exit_ok;
    for (std::size_t i = 0; i < tasks.size(); ++i)
    {
      if (!errors[i].empty())
      {
        std::cerr << "error: " << tasks[i].clean.string() << ": " << errors[i] << "\n";
        code = exit_partial;
        continue;
      }
      s.manifest.outputs.push_back(tasks[i].output.string());
      listing += format_csv_row({tasks[i].output.string(), tasks[i].clean.string(), tasks[i].segment.source_id,
                                 std::to_string(tasks[i].segment.start_packet), o->mode});
    }
    const auto listing_path = (std::filesystem::path(o->out_dir) / "degraded.csv").string();
    set_primary(s, listing_path);
    emit(s, listing_path, listing);
    return code;
  };
}

// train ---------------------------------------------------------------------

void add_train(CLI::App& app, std::map<const CLI::App*, Command>& commands)
{
  struct Opts
  {
    std::string manifest;
    std::string base_dir;
    std::string output;
    std::string loss_history;
    bool tiny = false;
    std::optional<std::size_t> gru_hidden, proj_kernel_w;
    std::optional<std::size_t> epochs, batch_size, eval_every;
    std::optional<double> lr, weight_decay, dropout, grad_clip;
    std::optional<std::string> precision, schedule;
    bool no_augment = false;
    bool quiet = false;
  };
  auto o = std::make_shared<Opts>();
  auto* sub = app.add_subcommand("train", "Train a model on a dataset manifest");
  sub->add_option("--manifest", o->manifest, "Dataset CSV: clip_path,rating,id,model_tag,split")->required();
  sub->add_option("--base-dir", o->base_dir, "Directory relative clip paths resolve against (default: manifest directory)");
  sub->add_option("-o,--output", o->output, "Output weight file")->required();
  sub->add_option("--loss-history", o->loss_history, "Loss history CSV (default: <output>.loss.csv)");
  add_model_flags(sub, o->tiny, o->gru_hidden, o->proj_kernel_w);
  sub->add_option("--dropout", o->dropout, "Dropout rate in the fully connected layers");
  sub->add_option("--epochs", o->epochs, "Training epochs");
  sub->add_option("--batch-size", o->batch_size, "Votes per minibatch");
  sub->add_option("--lr", o->lr, "Learning rate");
  sub->add_option("--weight-decay", o->weight_decay, "Decoupled weight decay");
  sub->add_option("--precision", o->precision, "f32 or f64")->check(CLI::IsMember({"f32", "f64"}));
  sub->add_option("--schedule", o->schedule, "constant or cosine")->check(CLI::IsMember({"constant", "cosine"}));
  sub->add_option("--grad-clip", o->grad_clip, "Global gradient norm clip (0 disables)");
  sub->add_option("--eval-every", o->eval_every, "Evaluate the eval split every n epochs (0 disables)");
  sub->add_flag("--no-augment", o->no_augment, "Disable microaugmentations");
  sub->add_flag("-q,--quiet", o->quiet, "No per-epoch progress");

  commands[sub] = [o](Session& s) {
    nlohmann::json model_over = nlohmann::json::object();
    put(model_over, "gru_hidden", o->gru_hidden);
    put(model_over, "proj_kernel_w", o->proj_kernel_w);
    put(model_over, "dropout", o->dropout);
    const auto mc = model_config(s, o->tiny, model_over);

    auto tj = s.section("train");
    put(tj, "epochs", o->epochs);
    put(tj, "batch_size", o->batch_size);
    put(tj, "lr", o->lr);
    put(tj, "weight_decay", o->weight_decay);
    put(tj, "precision", o->precision);
    put(tj, "schedule", o->schedule);
    put(tj, "grad_clip_norm", o->grad_clip);
    put(tj, "eval_every", o->eval_every);
    if (o->no_augment)
      tj["augment"] = false;
    auto tc = train_config_from_json(tj);
    tc.rng_seed = s.seed_or(tc.rng_seed);
    tc.validate();
    s.manifest.config = {{"model", to_json(mc)}, {"train", to_json(tc)}};
    s.manifest.seeds = {{"train", tc.rng_seed}};
    s.manifest.inputs.push_back(o->manifest);
    set_primary(s, o->output);

    const auto records = read_dataset_manifest(o->manifest);
    const std::filesystem::path base = o->base_dir.empty() ? std::filesystem::path(o->manifest).parent_path() : std::filesystem::path(o->base_dir);
    const auto train_set = load_training_set(records, Split::train, base);
    const bool has_eval = std::any_of(records.begin(), records.end(), [](const VoteRecord& r) { return r.split == Split::eval; });
    std::optional<TrainingSet> eval_set;
    if (has_eval)
      eval_set = load_training_set(records, Split::eval, base);

    TrainCallbacks cb;
    if (!o->quiet)
      cb.on_epoch = [&](const EpochStats& e) {
        std::fprintf(stderr, "epoch %zu/%zu train_mse %.6f", e.epoch, tc.epochs, e.train_mse);
        if (e.eval)
          std::fprintf(stderr, "  eval pcc %.4f srcc %.4f mae %.4f", e.eval->pcc, e.eval->srcc, e.eval->mae);
        std::fputc('\n', stderr);
      };
    const auto result = train(train_set, eval_set ? &*eval_set : nullptr, mc, tc, cb);

    const auto weight_bytes = save_weights(result.weights);
    write_binary_file(o->output, weight_bytes);
    s.manifest.outputs.push_back(o->output);
    emit(s, o->loss_history.empty() ? o->output + ".loss.csv" : o->loss_history, loss_history_csv(result.history));
    return int{exit_ok};
  };
}

// score ---------------------------------------------------------------------

void add_score(CLI::App& app, std::map<const CLI::App*, Command>& commands)
{
  struct Opts
  {
    std::vector<std::string> clips;
    std::string list;
    std::string weights;
    std::string output;
  };
  auto o = std::make_shared<Opts>();
  auto* sub = app.add_subcommand("score", "Predict MOS for WAV files");
  sub->add_option("clips", o->clips, "WAV files to score");
  sub->add_option("--list", o->list, "Text file with one WAV path per line");
  sub->add_option("--weights", o->weights, "Weight file")->required();
  sub->add_option("-o,--output", o->output, "Output CSV (default stdout)");

  commands[sub] = [o](Session& s) {
    auto clips = o->clips;
    if (!o->list.empty())
    {
      s.manifest.inputs.push_back(o->list);
      std::istringstream in{read_text_file(o->list)};
      for (std::string line; std::getline(in, line);)
        if (!line.empty())
          clips.push_back(line);
    }
    const auto weights = read_weights(o->weights);
    const auto seed = s.seed_or(0);
    s.manifest.inputs.push_back(o->weights);
    s.manifest.inputs.insert(s.manifest.inputs.end(), clips.begin(), clips.end());
    s.manifest.seeds = {{"inference", seed}};
    s.manifest.config = {{"model", to_json(weights.config())}};
    set_primary(s, o->output);

    const auto rows = score_files(clips, weights, seed, s.jobs);
    int code = exit_ok;
    for (const auto& r : rows)
      if (!r.result)
      {
        std::cerr << "error: " << r.clip_path << ": " << r.error << "\n";
        code = exit_partial;
      }
    emit(s, o->output, score_table_csv(rows));
    return code;
  };
}

// evaluate ------------------------------------------------------------------

void add_evaluate(CLI::App& app, std::map<const CLI::App*, Command>& commands)
{
  struct Opts
  {
    std::string manifest;
    std::string base_dir;
    std::string weights;
    std::string predictions;
    std::string output;
    std::string table;
    std::string modelwise;
    std::string name;
  };
  auto o = std::make_shared<Opts>();
  auto* sub = app.add_subcommand("evaluate", "Correlate predictions with reference MOS on the eval split");
  sub->add_option("--manifest", o->manifest, "Dataset CSV with eval-split votes")->required();
  sub->add_option("--base-dir", o->base_dir, "Directory relative clip paths resolve against (default: manifest directory)");
  auto* w = sub->add_option("--weights", o->weights, "Score with this weight file");
  auto* p = sub->add_option("--predictions", o->predictions, "Use an existing score CSV (clip_path,score,...) instead");
  w->excludes(p);
  sub->add_option("-o,--output", o->output, "Report JSON");
  sub->add_option("--table", o->table, "Plain-text table (default stdout)");
  sub->add_option("--modelwise-csv", o->modelwise, "Modelwise points CSV for plotting");
  sub->add_option("--name", o->name, "Metric label in the table");

  commands[sub] = [o](Session& s) {
    if (o->weights.empty() == o->predictions.empty())
      throw InvalidArgument("give --weights or --predictions");
    const auto records = read_dataset_manifest(o->manifest);
    s.manifest.inputs.push_back(o->manifest);
    const auto seed = s.seed_or(0);
    s.manifest.seeds = {{"inference", seed}, {"bootstrap", seed}};
    set_primary(s, o->output.empty() ? o->table : o->output);

    EvaluationReport report;
    std::string name = o->name;
    if (!o->weights.empty())
    {
      const auto weights = read_weights(o->weights);
      s.manifest.inputs.push_back(o->weights);
      s.manifest.config = {{"model", to_json(weights.config())}};
      const std::filesystem::path base = o->base_dir.empty() ? std::filesystem::path(o->manifest).parent_path() : std::filesystem::path(o->base_dir);
      report = evaluate_dataset(records, base, weights, seed, s.jobs);
      if (name.empty())
        name = "PLCMOS";
    }
    else
    {
      s.manifest.inputs.push_back(o->predictions);
      report = evaluate_predictions(records, parse_score_table(read_text_file(o->predictions)));
      if (name.empty())
        name = std::filesystem::path(o->predictions).stem().string();
    }
    if (!o->output.empty())
      emit(s, o->output, to_json(report).dump(2) + "\n");
    if (!o->modelwise.empty())
      emit(s, o->modelwise, modelwise_csv(report));
    emit(s, o->table, render_table(report, name));
    return int{exit_ok};
  };
}

// gradcheck -----------------------------------------------------------------

void add_gradcheck(CLI::App& app, std::map<const CLI::App*, Command>& commands)
{
  struct Opts
  {
    std::optional<double> tolerance, step;
    std::optional<std::size_t> frames, batch;
    bool eval_mode = false;
    bool full = false;
    std::string output;
  };
  auto o = std::make_shared<Opts>();
  auto* sub = app.add_subcommand("gradcheck", "Compare analytic gradients with finite differences");
  sub->add_option("--tolerance", o->tolerance, "Maximum relative error");
  sub->add_option("--step", o->step, "Finite-difference step");
  sub->add_option("--frames", o->frames, "Spectrogram frames per example");
  sub->add_option("--batch", o->batch, "Examples per batch");
  sub->add_flag("--eval-mode", o->eval_mode, "Disable dropout");
  sub->add_flag("--config-model", o->full, "Use the configured model instead of the tiny preset");
  sub->add_option("-o,--output", o->output, "Report JSON");

  commands[sub] = [o](Session& s) {
    GradcheckOptions g;
    if (o->full)
      g.config = model_config(s, false, nlohmann::json::object());
    g.tolerance = o->tolerance.value_or(g.tolerance);
    g.step = o->step.value_or(g.step);
    g.frames = o->frames.value_or(g.frames);
    g.batch = o->batch.value_or(g.batch);
    g.train_mode = !o->eval_mode;
    g.seed = s.seed_or(0);
    s.manifest.config = {{"model", to_json(g.config)}, {"tolerance", g.tolerance}, {"step", g.step}, {"frames", g.frames},
                         {"batch", g.batch}, {"train_mode", g.train_mode}};
    s.manifest.seeds = {{"gradcheck", g.seed}};
    set_primary(s, o->output);

    const auto report = gradcheck(g);
    for (const auto& t : report.tensors)
      std::printf("%-20s %8zu  max_rel %.3e  %s\n", t.name.c_str(), t.checked, t.max_rel_error, t.pass ? "ok" : "FAIL");
    std::printf("%s: worst %s at %.3e (tolerance %.1e), %.1f s\n", report.pass ? "PASS" : "FAIL", report.worst_tensor.c_str(),
                report.max_rel_error, report.tolerance, report.seconds);
    if (!o->output.empty())
      emit(s, o->output, to_json(report).dump(2) + "\n");
    return report.pass ? int{exit_ok} : int{exit_partial};
  };
}

// params --------------------------------------------------------------------

void add_params(CLI::App& app, std::map<const CLI::App*, Command>& commands)
{
  struct Opts
  {
    bool tiny = false;
    std::optional<std::size_t> gru_hidden, proj_kernel_w;
    bool json = false;
    std::string output;
  };
  auto o = std::make_shared<Opts>();
  auto* sub = app.add_subcommand("params", "Per-tensor parameter breakdown");
  add_model_flags(sub, o->tiny, o->gru_hidden, o->proj_kernel_w);
  sub->add_flag("--json", o->json, "Emit JSON instead of a table");
  sub->add_option("-o,--output", o->output, "Output file (default stdout)");

  commands[sub] = [o](Session& s) {
    nlohmann::json over = nlohmann::json::object();
    put(over, "gru_hidden", o->gru_hidden);
    put(over, "proj_kernel_w", o->proj_kernel_w);
    const auto mc = model_config(s, o->tiny, over);
    const auto pc = count_params(mc);
    s.manifest.config = {{"model", to_json(mc)}};
    set_primary(s, o->output);

    const std::vector<std::string> unknowns{"gru_hidden", "proj_kernel_w", "hidden_activation", "freq_pool placement"};
    const long long diff = static_cast<long long>(pc.total) - static_cast<long long>(reference_param_count);
    std::string text;
    if (o->json)
    {
      nlohmann::json tensors = nlohmann::json::array();
      for (const auto& t : pc.tensors)
        tensors.push_back({{"name", t.name}, {"shape", t.shape}, {"count", t.size()}});
      nlohmann::json j = {{"tensors", tensors},
                          {"total", pc.total},
                          {"subtotals",
                           {{"conv", pc.subtotal("conv")},
                            {"proj", pc.subtotal("proj")},
                            {"gru", pc.subtotal("gru")},
                            {"id_mlp", pc.subtotal("id_mlp")},
                            {"head", pc.subtotal("head")}}},
                          {"reference_total", reference_param_count},
                          {"difference", diff},
                          {"unknowns", unknowns},
                          {"config", to_json(mc)}};
      text = j.dump(2) + "\n";
    }
    else
    {
      char line[160];
      std::snprintf(line, sizeof line, "%-20s %-18s %12s\n", "tensor", "shape", "params");
      text += line;
      for (const auto& t : pc.tensors)
      {
        std::string shape = "[";
        for (std::size_t i = 0; i < t.shape.size(); ++i)
          shape += (i ? "," : "") + std::to_string(t.shape[i]);
        shape += "]";
        std::snprintf(line, sizeof line, "%-20s %-18s %12zu\n", t.name.c_str(), shape.c_str(), t.size());
        text += line;
      }
      text += "\n";
      for (const char* prefix : {"conv", "proj", "gru", "id_mlp", "head"})
      {
        std::snprintf(line, sizeof line, "%-39s %12zu\n", (std::string{prefix} + " subtotal").c_str(), pc.subtotal(prefix));
        text += line;
      }
      std::snprintf(line, sizeof line, "%-39s %12zu\n", "total", pc.total);
      text += line;
      std::snprintf(line, sizeof line, "%-39s %12zu\n", "reference total (release model)", reference_param_count);
      text += line;
      std::snprintf(line, sizeof line, "%-39s %+12lld\n", "difference", diff);
      text += line;
      text += "unknown in the reference architecture:";
      for (const auto& u : unknowns)
        text += " " + u;
      text += "\n";
    }
    emit(s, o->output, text);
    return int{exit_ok};
  };
}

// mcd -----------------------------------------------------------------------

void add_mcd(CLI::App& app, std::map<const CLI::App*, Command>& commands)
{
  struct Opts
  {
    std::string reference;
    std::vector<std::string> degraded;
    std::string output;
  };
  auto o = std::make_shared<Opts>();
  auto* sub = app.add_subcommand("mcd", "Mel-cepstral distortion against an aligned reference");
  sub->add_option("reference", o->reference, "Reference WAV")->required();
  sub->add_option("degraded", o->degraded, "Degraded WAVs of the same length")->required();
  sub->add_option("-o,--output", o->output, "Output CSV (default stdout)");

  commands[sub] = [o](Session& s) {
    s.manifest.inputs.push_back(o->reference);
    s.manifest.inputs.insert(s.manifest.inputs.end(), o->degraded.begin(), o->degraded.end());
    set_primary(s, o->output);
    const auto ref = read_wav(o->reference);
    std::string csv = "clip_path,mcd_db\n";
    int code = exit_ok;
    for (const auto& d : o->degraded)
    {
      try
      {
        char v[64];
        std::snprintf(v, sizeof v, "%.6f", mcd(ref, read_wav(d)));
        csv += d + "," + v + "\n";
      }
      catch (const Error& e)
      {
        std::cerr << "error: " << d << ": " << e.what() << "\n";
        code = exit_partial;
      }
    }
    emit(s, o->output, csv);
    return code;
  };
}

// replay --------------------------------------------------------------------

void add_replay(CLI::App& app, std::map<const CLI::App*, Command>& commands)
{
  auto path = std::make_shared<std::string>();
  auto* sub = app.add_subcommand("replay", "Re-run the invocation recorded in a run manifest");
  sub->add_option("manifest", *path, "Run manifest JSON")->required();

  commands[sub] = [path](Session& s) {
    const auto m = run_manifest_from_json(nlohmann::json::parse(read_text_file(*path)));
    if (!m.argv.empty() && m.argv.front() == "replay")
      throw InvalidArgument("refusing to replay a replay");
    s.manifest.inputs.push_back(*path);
    return run(m.argv);
  };
}

} // namespace

void register_commands(CLI::App& app, std::map<const CLI::App*, Command>& commands)
{
  add_trace_synth(app, commands);
  add_trace_sample(app, commands);
  add_trace_stats(app, commands);
  add_degrade(app, commands);
  add_train(app, commands);
  add_score(app, commands);
  add_evaluate(app, commands);
  add_gradcheck(app, commands);
  add_params(app, commands);
  add_mcd(app, commands);
  add_replay(app, commands);
}

} // namespace plcmos::cli
