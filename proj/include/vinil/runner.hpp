#pragma once

#include <charconv>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "vinil/checkpoint.hpp"
#include "vinil/eval.hpp"
#include "vinil/strategies.hpp"

namespace vinil {

using nlohmann::json;

struct ProtocolConfig {
  int n_tasks = 5;
  int categories_per_task = 2;
  int instance_subtasks = 1;
  int k_nn = 5;  // desk-scale default; the paper-scale value is 100

  void validate() const {
    check(n_tasks >= 1 && categories_per_task >= 1, "protocol: bad task shape");
    check(instance_subtasks >= 1, "protocol: instance_subtasks must be >= 1");
    check(k_nn >= 1, "protocol: k_nn must be >= 1");
  }
};

struct ExperimentConfig {
  uint64_t seed = 0;
  std::string dataset = "synthA";  // synthA | synthB | folder path
  int categories = 10;
  int instances_per_category = 4;
  int views_per_instance = 24;
  int image_size = 32;
  double gallery_fraction = 0.25;
  bool dataset_seed_set = false;
  uint64_t dataset_seed = 0;

  EncoderConfig encoder;
  StrategyConfig strategy;
  double momentum = 0.9;
  double base_lr = 0.001;
  double min_lr = 0.0;

  ProtocolConfig protocol;
  std::string output_dir = "runs/run";
  bool emit_svg = true;
  std::string cross_dataset;  // empty = no cross-dataset evaluation

  uint64_t effective_dataset_seed() const { return dataset_seed_set ? dataset_seed : seed; }

  void validate() const {
    strategy.validate();
    encoder.validate();
    protocol.validate();
    check(strategy.hyper.batch_size >= 2, "config: batch_size must be >= 2 (the self-supervised "
                                          "loss normalizes over the batch)");
    check(momentum >= 0.0 && momentum < 1.0, "config: momentum outside [0, 1)");
    check(base_lr > 0.0, "config: base_lr must be positive");
    check(min_lr >= 0.0 && min_lr <= base_lr, "config: need 0 <= min_lr <= base_lr");
    check(!dataset.empty(), "config: dataset must be a preset name or a folder path");
    check(!output_dir.empty(), "config: output_dir must not be empty");
  }
};

// ---- strict JSON config ------------------------------------------------------

namespace detail {

inline void expect_keys(const json& obj, const std::string& where,
                        std::initializer_list<const char*> keys) {
  check(obj.is_object(), "config: ", where, " must be an object");
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    bool known = false;
    for (const char* k : keys) known = known || it.key() == k;
    check(known, "config: unknown key '", where, ".", it.key(), "'");
  }
}

template <typename T>
T get_or(const json& obj, const char* key, T fallback) {
  auto it = obj.find(key);
  if (it == obj.end()) return fallback;
  return it->get<T>();
}

}  // namespace detail

inline ExperimentConfig config_from_json(const json& j) {
  using detail::expect_keys;
  using detail::get_or;
  ExperimentConfig cfg;
  expect_keys(j, "$",
              {"seed", "dataset", "data", "encoder", "strategy", "hyper", "protocol",
               "output_dir", "emit_svg", "cross_dataset"});
  cfg.seed = get_or<uint64_t>(j, "seed", cfg.seed);
  cfg.dataset = get_or<std::string>(j, "dataset", cfg.dataset);
  if (j.contains("data")) {
    const json& d = j.at("data");
    expect_keys(d, "data",
                {"categories", "instances_per_category", "views_per_instance", "image_size",
                 "gallery_fraction", "seed"});
    cfg.categories = get_or<int>(d, "categories", cfg.categories);
    cfg.instances_per_category = get_or<int>(d, "instances_per_category", cfg.instances_per_category);
    cfg.views_per_instance = get_or<int>(d, "views_per_instance", cfg.views_per_instance);
    cfg.image_size = get_or<int>(d, "image_size", cfg.image_size);
    cfg.gallery_fraction = get_or<double>(d, "gallery_fraction", cfg.gallery_fraction);
    if (d.contains("seed")) {
      cfg.dataset_seed_set = true;
      cfg.dataset_seed = d.at("seed").get<uint64_t>();
    }
  }
  if (j.contains("encoder")) {
    const json& e = j.at("encoder");
    expect_keys(e, "encoder", {"kind", "hidden", "embed_dim", "projector"});
    const std::string kind = get_or<std::string>(e, "kind", "mlp");
    check(kind == "mlp" || kind == "smallconv", "config: encoder.kind must be mlp|smallconv");
    cfg.encoder.kind = kind == "mlp" ? EncoderKind::mlp : EncoderKind::smallconv;
    cfg.encoder.hidden = default_hidden(cfg.encoder.kind);
    if (e.contains("hidden")) cfg.encoder.hidden = e.at("hidden").get<std::vector<int>>();
    cfg.encoder.embed_dim = get_or<int>(e, "embed_dim", cfg.encoder.embed_dim);
    if (e.contains("projector")) {
      const json& p = e.at("projector");
      expect_keys(p, "encoder.projector", {"enabled", "hidden", "out"});
      cfg.encoder.projector.enabled = get_or<bool>(p, "enabled", true);
      cfg.encoder.projector.hidden = get_or<int>(p, "hidden", cfg.encoder.projector.hidden);
      cfg.encoder.projector.out = get_or<int>(p, "out", cfg.encoder.projector.out);
    }
  }
  if (j.contains("strategy")) {
    const json& s = j.at("strategy");
    expect_keys(s, "strategy", {"method", "supervision", "memory_fraction"});
    cfg.strategy.method = parse_method(get_or<std::string>(s, "method", "finetune"));
    cfg.strategy.supervision = parse_supervision(get_or<std::string>(s, "supervision", "self"));
    cfg.strategy.memory_fraction = get_or<double>(s, "memory_fraction", 0.10);
  }
  if (j.contains("hyper")) {
    const json& h = j.at("hyper");
    expect_keys(h, "hyper",
                {"w_c", "w_b", "momentum", "base_lr", "min_lr", "batch_size",
                 "epochs_per_session"});
    cfg.strategy.hyper.w_c = get_or<double>(h, "w_c", 0.7);
    cfg.strategy.hyper.w_b = get_or<double>(h, "w_b", 0.03);
    cfg.momentum = get_or<double>(h, "momentum", 0.9);
    cfg.base_lr = get_or<double>(h, "base_lr", 0.001);
    cfg.min_lr = get_or<double>(h, "min_lr", 0.0);
    cfg.strategy.hyper.batch_size = get_or<int>(h, "batch_size", 64);
    cfg.strategy.hyper.epochs_per_session = get_or<int>(h, "epochs_per_session", 20);
  }
  if (j.contains("protocol")) {
    const json& p = j.at("protocol");
    expect_keys(p, "protocol", {"n_tasks", "categories_per_task", "instance_subtasks", "k_nn"});
    cfg.protocol.n_tasks = get_or<int>(p, "n_tasks", 5);
    cfg.protocol.categories_per_task = get_or<int>(p, "categories_per_task", 2);
    cfg.protocol.instance_subtasks = get_or<int>(p, "instance_subtasks", 1);
    cfg.protocol.k_nn = get_or<int>(p, "k_nn", 5);
  }
  cfg.output_dir = get_or<std::string>(j, "output_dir", cfg.output_dir);
  cfg.emit_svg = get_or<bool>(j, "emit_svg", cfg.emit_svg);
  cfg.cross_dataset = get_or<std::string>(j, "cross_dataset", cfg.cross_dataset);
  cfg.validate();
  return cfg;
}

inline json config_to_json(const ExperimentConfig& cfg) {
  json j;
  j["seed"] = cfg.seed;
  j["dataset"] = cfg.dataset;
  j["data"] = {{"categories", cfg.categories},
               {"instances_per_category", cfg.instances_per_category},
               {"views_per_instance", cfg.views_per_instance},
               {"image_size", cfg.image_size},
               {"gallery_fraction", cfg.gallery_fraction},
               {"seed", cfg.effective_dataset_seed()}};
  j["encoder"] = {{"kind", cfg.encoder.kind == EncoderKind::mlp ? "mlp" : "smallconv"},
                  {"hidden", cfg.encoder.hidden},
                  {"embed_dim", cfg.encoder.embed_dim},
                  {"projector",
                   {{"enabled", cfg.encoder.projector.enabled},
                    {"hidden", cfg.encoder.projector.hidden},
                    {"out", cfg.encoder.projector.out}}}};
  j["strategy"] = {{"method", method_name(cfg.strategy.method)},
                   {"supervision", supervision_name(cfg.strategy.supervision)},
                   {"memory_fraction", cfg.strategy.memory_fraction}};
  j["hyper"] = {{"w_c", cfg.strategy.hyper.w_c},
                {"w_b", cfg.strategy.hyper.w_b},
                {"momentum", cfg.momentum},
                {"base_lr", cfg.base_lr},
                {"min_lr", cfg.min_lr},
                {"batch_size", cfg.strategy.hyper.batch_size},
                {"epochs_per_session", cfg.strategy.hyper.epochs_per_session}};
  j["protocol"] = {{"n_tasks", cfg.protocol.n_tasks},
                   {"categories_per_task", cfg.protocol.categories_per_task},
                   {"instance_subtasks", cfg.protocol.instance_subtasks},
                   {"k_nn", cfg.protocol.k_nn}};
  j["output_dir"] = cfg.output_dir;
  j["emit_svg"] = cfg.emit_svg;
  j["cross_dataset"] = cfg.cross_dataset;
  return j;
}

inline ExperimentConfig load_config_file(const std::filesystem::path& path) {
  std::ifstream f(path);
  check(f.good(), "cannot open config file ", path.string());
  json j;
  try {
    f >> j;
  } catch (const json::exception& e) {
    fail("config file ", path.string(), " is not valid JSON: ", e.what());
  }
  return config_from_json(j);
}

// ---- dataset construction ------------------------------------------------------

inline bool is_preset_name(const std::string& name) {
  return name == "synthA" || name == "synthB";
}

/// A preset name generates synthetic data; anything else is read as a
/// folder dataset path.
inline std::vector<Sample> build_samples(const ExperimentConfig& cfg, const std::string& name) {
  if (is_preset_name(name)) {
    DatasetConfig dc;
    dc.seed = cfg.effective_dataset_seed();
    dc.n_categories = cfg.categories;
    dc.instances_per_category = cfg.instances_per_category;
    dc.views_per_instance = cfg.views_per_instance;
    dc.image_size = cfg.image_size;
    dc.gallery_fraction = cfg.gallery_fraction;
    dc.preset = name == "synthA" ? Preset::synthA : Preset::synthB;
    return generate_dataset(dc);
  }
  return load_folder_dataset(name, cfg.gallery_fraction);
}

// ---- run record + reports ------------------------------------------------------

struct RunRecord {
  json config_echo;
  SessionMatrix matrix;
  std::vector<double> overall_per_session;
  std::vector<double> mean_loss_per_session;
  std::vector<size_t> buffer_size_per_session;
  std::vector<double> seconds_per_session;
  double acc = 0.0;
  double forgetting = 0.0;
  int sessions = 0;
  std::string checkpoint_path;
  GalleryIndex final_index;

  bool has_cross = false;
  std::string cross_dataset;
  double cross_acc = 0.0;
  double cross_drop_pct = 0.0;
};

namespace detail {

inline std::string fmt_double(double v) {
  char buf[32];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  check(ec == std::errc{}, "fmt_double failed");
  return std::string(buf, end);
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  check(f.good(), "cannot open ", path.string(), " for writing");
  f << text;
  check(f.good(), "write failed for ", path.string());
}

inline std::string heatmap_svg(const SessionMatrix& m) {
  const int T = m.tasks(), S = m.sessions();
  const int cell = 28, margin = 28;
  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << margin + S * cell + 8
      << "\" height=\"" << margin + T * cell + 8 << "\">\n";
  for (int t = 0; t < T; ++t)
    for (int s = 0; s < S; ++s) {
      const double v = m.a[(size_t)t][(size_t)s];
      // two-stop ramp: dark blue (0) -> yellow (1)
      const int r = (int)std::lround(40 + 215 * v);
      const int g = (int)std::lround(44 + 196 * v);
      const int b = (int)std::lround(120 - 70 * v);
      svg << "<rect x=\"" << margin + s * cell << "\" y=\"" << margin + t * cell << "\" width=\""
          << cell - 2 << "\" height=\"" << cell - 2 << "\" fill=\"rgb(" << r << "," << g << ","
          << b << ")\"><title>task " << t << ", session " << s << ": " << fmt_double(v)
          << "</title></rect>\n";
    }
  for (int s = 0; s < S; ++s)
    svg << "<text x=\"" << margin + s * cell + 6 << "\" y=\"" << margin - 8
        << "\" font-size=\"11\">" << s << "</text>\n";
  for (int t = 0; t < T; ++t)
    svg << "<text x=\"6\" y=\"" << margin + t * cell + 17 << "\" font-size=\"11\">" << t
        << "</text>\n";
  svg << "</svg>\n";
  return svg.str();
}

}  // namespace detail

inline json metrics_json(const RunRecord& record) {
  json j;
  j["method"] = record.config_echo.at("strategy").at("method");
  j["supervision"] = record.config_echo.at("strategy").at("supervision");
  j["dataset"] = record.config_echo.at("dataset");
  j["seed"] = record.config_echo.at("seed");
  j["k_nn"] = record.config_echo.at("protocol").at("k_nn");
  j["sessions"] = record.sessions;
  j["acc"] = record.acc;
  j["acc_pct"] = 100.0 * record.acc;
  j["forgetting"] = record.forgetting;
  j["forgetting_pct"] = 100.0 * record.forgetting;
  j["overall_per_session"] = record.overall_per_session;
  j["session_matrix"] = record.matrix.a;
  j["buffer_size_per_session"] = record.buffer_size_per_session;
  if (record.has_cross) {
    j["cross"] = {{"dataset", record.cross_dataset},
                  {"acc", record.cross_acc},
                  {"acc_pct", 100.0 * record.cross_acc},
                  {"relative_drop_pct", record.cross_drop_pct}};
  }
  return j;
}

/// Writes metrics.json, heatmap_<method>.csv (rows = tasks, cols =
/// sessions), neighbors.txt (top-5 per sampled query) and optionally
/// heatmap.svg into the record's output directory.
inline void emit_reports(const RunRecord& record) {
  namespace fs = std::filesystem;
  const fs::path dir = record.config_echo.at("output_dir").get<std::string>();
  fs::create_directories(dir);
  const std::string method = record.config_echo.at("strategy").at("method").get<std::string>();

  detail::write_text(dir / "metrics.json", metrics_json(record).dump(2) + "\n");

  {
    std::ostringstream csv;
    csv << "task";
    for (int s = 0; s < record.matrix.sessions(); ++s) csv << ",session" << s;
    csv << "\n";
    for (int t = 0; t < record.matrix.tasks(); ++t) {
      csv << t;
      for (int s = 0; s < record.matrix.sessions(); ++s)
        csv << "," << detail::fmt_double(record.matrix.a[(size_t)t][(size_t)s]);
      csv << "\n";
    }
    detail::write_text(dir / (std::string("heatmap_") + method + ".csv"), csv.str());
  }

  {
    const GalleryIndex& index = record.final_index;
    std::ostringstream txt;
    const uint64_t seed = record.config_echo.at("seed").get<uint64_t>();
    Rng rng(mix_seed(seed, 0x6e626f72ull));
    const int queries = std::min(3, index.rows);
    std::vector<size_t> picks = rng.sample_without_replacement((size_t)index.rows, (size_t)queries);
    for (size_t qi = 0; qi < picks.size(); ++qi) {
      const int q = (int)picks[qi];
      txt << "query row=" << q << " instance=" << index.instance_ids[(size_t)q] << "\n";
      std::vector<std::pair<double, int>> dist;
      for (int r = 0; r < index.rows; ++r) {
        if (r == q) continue;
        double d2 = 0.0;
        for (int i = 0; i < index.dim; ++i) {
          const double d = index.row(q)[i] - index.row(r)[i];
          d2 += d * d;
        }
        dist.emplace_back(d2, r);
      }
      const int top = std::min<int>(5, (int)dist.size());
      std::partial_sort(dist.begin(), dist.begin() + top, dist.end());
      for (int i = 0; i < top; ++i) {
        const int r = dist[(size_t)i].second;
        const int id = index.instance_ids[(size_t)r];
        txt << "  " << (i + 1) << ". instance=" << id << " row=" << r
            << " dist=" << detail::fmt_double(std::sqrt(dist[(size_t)i].first))
            << (id == index.instance_ids[(size_t)q] ? " hit" : " miss") << "\n";
      }
    }
    detail::write_text(dir / "neighbors.txt", txt.str());
  }

  if (record.config_echo.at("emit_svg").get<bool>())
    detail::write_text(dir / "heatmap.svg", detail::heatmap_svg(record.matrix));

  {
    json rr;
    rr["config"] = record.config_echo;
    rr["checkpoint"] = record.checkpoint_path;
    rr["seconds_per_session"] = record.seconds_per_session;
    rr["mean_loss_per_session"] = record.mean_loss_per_session;
    detail::write_text(dir / "run_record.json", rr.dump(2) + "\n");
  }
}

// ---- the experiment loop ------------------------------------------------------

namespace detail {

inline ViewBatch make_view_batch(const std::vector<const Sample*>& samples,
                                 const ModelState& model, Supervision sup, Rng& rng) {
  const Tensor& first = samples.front()->image;
  const int C = first.shape[0], H = first.shape[1], W = first.shape[2];
  const int B = (int)samples.size();
  ViewBatch batch;
  batch.x = Tensor({B, C, H, W});
  batch.x_aug = Tensor({B, C, H, W});
  for (int i = 0; i < B; ++i) {
    const Tensor& img = samples[(size_t)i]->image;
    std::copy(img.values.begin(), img.values.end(),
              batch.x.values.begin() + (int64_t)i * C * H * W);
    Tensor aug = augment(img, rng);
    std::copy(aug.values.begin(), aug.values.end(),
              batch.x_aug.values.begin() + (int64_t)i * C * H * W);
    if (sup == Supervision::label) {
      const int slot = model.slot_of(samples[(size_t)i]->instance_id);
      check(slot >= 0, "train: instance ", samples[(size_t)i]->instance_id,
            " was never registered with the classifier");
      batch.labels.push_back(slot);
    }
  }
  return batch;
}

inline ViewBatch make_memory_view_batch(const MemoryBatch& mem, const ModelState& model,
                                        Supervision sup, Rng& rng) {
  const Tensor& first = mem.items.front()->image;
  const int C = first.shape[0], H = first.shape[1], W = first.shape[2];
  const int B = (int)mem.items.size();
  ViewBatch batch;
  batch.x = Tensor({B, C, H, W});
  batch.x_aug = Tensor({B, C, H, W});
  for (int i = 0; i < B; ++i) {
    const Tensor& img = mem.items[(size_t)i]->image;
    std::copy(img.values.begin(), img.values.end(),
              batch.x.values.begin() + (int64_t)i * C * H * W);
    Tensor aug = augment(img, rng);
    std::copy(aug.values.begin(), aug.values.end(),
              batch.x_aug.values.begin() + (int64_t)i * C * H * W);
    if (sup == Supervision::label) {
      const int slot = model.slot_of(mem.items[(size_t)i]->label);
      check(slot >= 0, "train: memory instance ", mem.items[(size_t)i]->label,
            " was never registered with the classifier");
      batch.labels.push_back(slot);
    }
  }
  return batch;
}

}  // namespace detail

/// The full protocol: build the stream, then per session train with the
/// configured strategy, update its state, and evaluate the whole gallery.
/// Everything downstream of the config+seed is deterministic.
inline RunRecord run_experiment(const ExperimentConfig& cfg) {
  cfg.validate();
  namespace fs = std::filesystem;
  using clock = std::chrono::steady_clock;

  std::vector<Sample> samples = build_samples(cfg, cfg.dataset);
  check(!samples.empty(), "run_experiment: dataset '", cfg.dataset, "' is empty");
  TaskStream stream = split_protocol(samples, cfg.protocol.n_tasks,
                                     cfg.protocol.categories_per_task,
                                     cfg.protocol.instance_subtasks, cfg.seed);
  const int sessions = (int)stream.tasks.size();

  ModelState model = make_model(cfg.encoder, cfg.seed);
  OptimizerState opt;
  opt.momentum = cfg.momentum;
  opt.base_lr = cfg.base_lr;
  opt.min_lr = cfg.min_lr;
  opt.total_epochs = std::max(1, cfg.strategy.hyper.epochs_per_session);

  EwCState ewc;
  MemoryBuffer buffer;
  buffer.supervision = cfg.strategy.supervision;
  Rng train_rng(mix_seed(cfg.seed, 0x747261696eull));

  RunRecord record;
  record.config_echo = config_to_json(cfg);
  record.sessions = sessions;

  const StrategyConfig& strategy = cfg.strategy;
  const int batch_size = strategy.hyper.batch_size;

  for (int s = 0; s < sessions; ++s) {
    const auto session_start = clock::now();
    const Task& task = stream.tasks[(size_t)s];
    if (strategy.supervision == Supervision::label)
      register_instances(model, task.instance_ids, &opt);

    double loss_sum = 0.0;
    int loss_count = 0;
    for (int epoch = 0; epoch < strategy.hyper.epochs_per_session; ++epoch) {
      opt.epoch = epoch;
      std::vector<const Sample*> order;
      order.reserve(task.train.size());
      for (const Sample& sample : task.train) order.push_back(&sample);
      train_rng.shuffle(order);
      for (size_t start = 0; start < order.size(); start += (size_t)batch_size) {
        const size_t stop = std::min(order.size(), start + (size_t)batch_size);
        if (stop - start < 2) continue;  // batch statistics need >= 2 rows
        std::vector<const Sample*> chunk(order.begin() + (int64_t)start,
                                         order.begin() + (int64_t)stop);
        ViewBatch batch =
            detail::make_view_batch(chunk, model, strategy.supervision, train_rng);
        ViewBatch memory_batch;
        SessionInputs inputs;
        inputs.ewc = &ewc;
        if (strategy.method == Method::replay && !buffer.items.empty()) {
          MemoryBatch mem = replay_batch(buffer, batch_size, train_rng);
          memory_batch =
              detail::make_memory_view_batch(mem, model, strategy.supervision, train_rng);
          inputs.memory = &memory_batch;
        }
        Tape tape;
        {
          ParameterBinding binding(tape, model);
          Tensor loss = session_loss(tape, model, batch, strategy, inputs);
          loss_sum += loss.values[0];
          ++loss_count;
          tape.backward(loss);
          auto grads = collect_grads(tape, model);
          sgd_momentum_step(model.params, grads, opt);
        }
      }
    }

    if (strategy.method == Method::ewc)
      ewc = ewc_update_after_session(model, task.train, strategy.supervision);
    if (strategy.method == Method::replay)
      buffer_update(buffer, task, strategy.memory_fraction, cfg.seed);
    record.buffer_size_per_session.push_back(buffer.items.size());

    GalleryIndex index = embed_gallery(model, stream.gallery, &stream.instance_task);
    SessionColumn col = session_eval(index, sessions, cfg.protocol.k_nn);
    record.matrix.append_column(col.per_task);
    record.overall_per_session.push_back(col.overall);
    record.mean_loss_per_session.push_back(loss_count ? loss_sum / loss_count : 0.0);
    record.seconds_per_session.push_back(
        std::chrono::duration<double>(clock::now() - session_start).count());
    if (s + 1 == sessions) record.final_index = std::move(index);

    std::cout << "[session " << (s + 1) << "/" << sessions << "] "
              << method_name(strategy.method) << "/" << supervision_name(strategy.supervision)
              << " mean_loss=" << record.mean_loss_per_session.back()
              << " overall_acc=" << col.overall << "\n";
  }

  record.acc = accuracy_metric(record.matrix);
  record.forgetting = sessions >= 2 ? forgetting_metric(record.matrix) : 0.0;

  fs::create_directories(cfg.output_dir);
  record.checkpoint_path = (fs::path(cfg.output_dir) / "checkpoint.bin").string();
  save_checkpoint(model, record.checkpoint_path);

  if (!cfg.cross_dataset.empty()) {
    std::vector<Sample> foreign = build_samples(cfg, cfg.cross_dataset);
    std::vector<Sample> foreign_gallery;
    for (const Sample& fs_ : foreign)
      if (fs_.split == Split::gallery) foreign_gallery.push_back(fs_);
    CrossEvalResult cross =
        cross_dataset_eval(model, foreign_gallery, record.acc, cfg.protocol.k_nn);
    record.has_cross = true;
    record.cross_dataset = cfg.cross_dataset;
    record.cross_acc = cross.cross_acc;
    record.cross_drop_pct = cross.relative_drop;
  }

  emit_reports(record);
  return record;
}

// ---- multi-run report aggregation ------------------------------------------------

/// Paper-style row label, e.g. "FT (VINIL)".
inline std::string table_row_label(const std::string& method, const std::string& supervision) {
  std::string m = method == "finetune" ? "FT" : method == "ewc" ? "EwC" : "Replay";
  return m + (supervision == "label" ? " (Label)" : " (VINIL)");
}

/// Merges per-run metrics.json files into an accuracy/forgetting table
/// (and a cross-dataset table when cross rows exist).
inline void aggregate_report(const std::vector<std::string>& run_dirs,
                             const std::string& out_dir) {
  namespace fs = std::filesystem;
  json rows = json::array();
  for (const std::string& dir : run_dirs) {
    const fs::path p = fs::path(dir) / "metrics.json";
    std::ifstream f(p);
    check(f.good(), "aggregate_report: cannot open ", p.string());
    json m;
    f >> m;
    rows.push_back(m);
  }
  const auto order = [](const json& m) {
    const std::string method = m.at("method").get<std::string>();
    const std::string sup = m.at("supervision").get<std::string>();
    const int mi = method == "finetune" ? 0 : method == "replay" ? 1 : 2;
    return mi * 2 + (sup == "label" ? 0 : 1);
  };
  std::sort(rows.begin(), rows.end(),
            [&](const json& a, const json& b) { return order(a) < order(b); });

  fs::create_directories(out_dir);
  std::ostringstream t2;
  t2 << "method,acc_pct,for_pct\n";
  for (const json& m : rows)
    t2 << table_row_label(m.at("method"), m.at("supervision")) << ","
       << detail::fmt_double(m.at("acc_pct").get<double>()) << ","
       << detail::fmt_double(m.at("forgetting_pct").get<double>()) << "\n";
  detail::write_text(fs::path(out_dir) / "table2.csv", t2.str());

  bool any_cross = false;
  std::ostringstream t3;
  t3 << "method,cross_dataset,cross_acc_pct,relative_drop_pct\n";
  for (const json& m : rows) {
    if (!m.contains("cross")) continue;
    any_cross = true;
    t3 << table_row_label(m.at("method"), m.at("supervision")) << ","
       << m.at("cross").at("dataset").get<std::string>() << ","
       << detail::fmt_double(m.at("cross").at("acc_pct").get<double>()) << ","
       << detail::fmt_double(m.at("cross").at("relative_drop_pct").get<double>()) << "\n";
  }
  if (any_cross) detail::write_text(fs::path(out_dir) / "table3.csv", t3.str());

  json combined;
  combined["rows"] = rows;
  detail::write_text(fs::path(out_dir) / "report.json", combined.dump(2) + "\n");
}

}  // namespace vinil
