// SPDX-License-Identifier: Apache-2.0
#include "commands.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#ifdef __GLIBC__
#include <malloc.h>
#endif
#include <random>
#include <sstream>

#include "json.hpp"

#include "etc/attention.hpp"
#include "etc/checkpoint.hpp"
#include "etc/encoder.hpp"
#include "etc/kernels.hpp"
#include "etc/pretraining.hpp"
#include "etc/structure.hpp"
#include "etc/tokenizer.hpp"
#include "etc/verify/suite.hpp"

namespace etc::cli {
namespace {

using nlohmann::json;
namespace fs = std::filesystem;

std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw UsageError("cannot read " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const std::string& path, const std::string& text) {
  const fs::path p(path);
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw UsageError("cannot write " + path);
  out << text;
}

void apply_threads(const CommonOptions& common, int fallback) {
  kernels::set_num_threads(common.threads > 0 ? common.threads : fallback);
}

// Interference only adds time, so the best repeat is the cleanest estimate.
double fastest(const std::vector<double>& v) { return *std::min_element(v.begin(), v.end()); }

template <class F>
double time_ms(F&& f) {
  const auto t0 = std::chrono::steady_clock::now();
  f();
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
}

Matrix<float> random_rows(std::size_t n, std::size_t d, std::mt19937_64& rng) {
  std::normal_distribution<float> normal(0.0f, 1.0f);
  Matrix<float> m(n, d);
  for (float& v : m.values()) v = normal(rng);
  return m;
}

std::string fmt(double v, int digits) {
  std::ostringstream ss;
  ss << std::fixed << std::setprecision(digits) << v;
  return ss.str();
}

template <class M>
json matrix_json(const M& m) {
  json rows = json::array();
  for (std::size_t i = 0; i < m.rows(); ++i) {
    json row = json::array();
    for (std::size_t j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

template <class T>
json encoded_json(const EtcInput& in, const Matrix<T>& global, const Matrix<T>& long_seq, std::size_t radius) {
  json j;
  j["n_global"] = in.n_global();
  j["n_long"] = in.n_long();
  j["global_ids"] = in.global_ids;
  j["long_ids"] = in.long_ids;
  j["H_g"] = matrix_json(global);
  j["H_l"] = matrix_json(long_seq);
  j["local_radius"] = radius;
  j["masks"] = {{"g2g", matrix_json(in.masks.g2g)},
                {"g2l", matrix_json(in.masks.g2l)},
                {"l2g", matrix_json(in.masks.l2g)},
                {"l2l_band", matrix_json(in.masks.l2l.cells())}};
  j["labels"] = {{"g2g", matrix_json(in.labels.g2g)},
                 {"g2l", matrix_json(in.labels.g2l)},
                 {"l2g", matrix_json(in.labels.l2g)},
                 {"l2l_band", matrix_json(in.labels.l2l.cells())}};
  return j;
}

template <class T>
json encode_all(const std::vector<EtcInput>& inputs, const ParameterSet<T>& params, const ModelConfig& config) {
  json out = json::array();
  for (const EtcInput& in : inputs) {
    const auto h = encode(in, params, config);
    out.push_back(encoded_json(in, h.global, h.long_seq, config.local_radius));
  }
  return out;
}

bool looks_like_json(const std::string& text) {
  const auto p = text.find_first_not_of(" \t\r\n");
  return p != std::string::npos && (text[p] == '{' || text[p] == '[');
}

template <class T>
int run_pretrain(const ModelConfig& config, const TrainConfig& train, const CommonOptions& common,
                 const PretrainArgs& args, std::ostream& out, std::ostream& err) {
  const auto corpus = tokenize_corpus(read_text(args.corpus), config.vocab_size);
  Pretrainer<T> trainer(corpus, config, train, common.seed);
  const std::size_t steps = args.steps.value_or(200);
  const fs::path dir = common.out.empty() ? fs::path("pretrain_out") : fs::path(common.out);
  fs::create_directories(dir);
  std::ostringstream csv, timing;
  csv << "step,mlm_loss,cpc_loss,total,mlm_targets,cpc_batch\n";
  timing << "step,wall_ms\n";
  double elapsed = 0;
  for (std::size_t s = 1; s <= steps; ++s) {
    StepMetrics m;
    const double ms = time_ms([&] { m = trainer.step(); });
    elapsed += ms;
    csv << s << ',' << fmt(m.mlm_loss, 6) << ',' << (std::isnan(m.cpc_loss) ? std::string("nan") : fmt(m.cpc_loss, 6))
        << ',' << fmt(m.total, 6) << ',' << m.mlm_targets << ',' << m.cpc_batch << '\n';
    timing << s << ',' << fmt(ms, 3) << '\n';
    if (s % 20 == 0 || s == steps)
      err << "step " << s << " mlm " << fmt(m.mlm_loss, 4) << " cpc " << fmt(m.cpc_loss, 4) << " ("
          << fmt(elapsed / static_cast<double>(s), 1) << " ms/step)\n";
  }
  write_text((dir / "metrics.csv").string(), csv.str());
  write_text((dir / "timing.csv").string(), timing.str());
  save_parameters(trainer.parameters(), config, (dir / "checkpoint").string());
  out << "documents " << trainer.documents() << ", steps " << steps << ", wrote " << (dir / "metrics.csv").string()
      << " and " << (dir / "checkpoint").string() << ".*\n";
  return kExitOk;
}

}  // namespace

std::vector<std::size_t> parse_lengths(const std::string& text) {
  std::vector<std::size_t> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    std::size_t used = 0;
    unsigned long long v = 0;
    try {
      v = std::stoull(item, &used);
    } catch (const std::exception&) {
      throw UsageError("--lengths: '" + item + "' is not a positive integer");
    }
    if (used != item.size() || v == 0) throw UsageError("--lengths: '" + item + "' is not a positive integer");
    if (!out.empty() && v <= out.back()) throw UsageError("--lengths must be ascending");
    out.push_back(static_cast<std::size_t>(v));
  }
  if (out.empty()) throw UsageError("--lengths is empty");
  return out;
}

ModelConfig resolve_model_config(const CommonOptions& common) {
  ModelConfig config = common.config_path.empty() ? ModelConfig{} : load_model_config(common.config_path);
  if (common.sharing) config.sharing = *common.sharing;
  config.validate();
  return config;
}

TrainConfig resolve_train_config(const CommonOptions& common) {
  if (common.config_path.empty()) return TrainConfig{};
  const json j = json::parse(read_text(common.config_path));
  return j.contains("training") ? train_config_from_json(j.dump()) : TrainConfig{};
}

int cmd_verify(const CommonOptions& common, const VerifyArgs& args, std::ostream& out, std::ostream&) {
  apply_threads(common, kernels::num_threads());
  verify::VerifyOptions options;
  options.seed = common.seed;
  options.trials = args.trials;
  options.fault = args.fault;
  const verify::VerifyReport report = verify::run_verification(options);
  out << report.text();
  if (!common.out.empty()) write_text(common.out, report.json());
  return report.all_passed() ? kExitOk : kExitFailure;
}

std::vector<BenchRow> run_bench(const BenchArgs& args, std::uint64_t seed) {
#ifdef __GLIBC__
  // Keep freed blocks in the heap so timings do not include page faults.
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
  ModelConfig config;
  config.layers = 1;
  config.hidden = args.hidden;
  config.heads = args.heads;
  config.local_radius = args.radius;
  config.max_long = args.lengths.empty() ? 1 : args.lengths.back();
  config.max_global = std::max<std::size_t>(args.n_global, config.max_long / 16 + 1);
  config.validate();
  const auto params = init_parameters<float>(config, seed);
  const auto& attention = params.layers[0].attention;
  std::mt19937_64 rng(seed);

  struct Case {
    Matrix<float> xg, xl, x;
    PieceMasks masks, dense_masks;
    PieceLabels labels, dense_labels;
    std::vector<double> etc_times, dense_times;
  };
  std::vector<BenchRow> rows;
  std::vector<Case> cases;
  for (std::size_t n_l : args.lengths) {
    BenchRow row;
    row.n_l = n_l;
    row.n_g = args.n_global ? args.n_global : std::max<std::size_t>(1, n_l / 16);
    row.r = args.radius;
    row.pairs = count_attention_pairs(row.n_g, n_l, row.r);
    Case c;
    try {
      c.xg = random_rows(row.n_g, config.hidden, rng);
      c.xl = random_rows(n_l, config.hidden, rng);
      c.masks = full_masks(row.n_g, n_l, row.r);
      c.labels = sequence_labels(row.n_g, n_l, row.r, config.clip_distance);
      for (int k = 0; k < 2; ++k) global_local_attention(c.xg, c.xl, attention, c.masks, c.labels);
      const std::size_t base = memory::live_bytes();
      memory::reset_peak();
      global_local_attention(c.xg, c.xl, attention, c.masks, c.labels);
      row.peak_bytes = memory::peak_bytes() - std::min(base, memory::peak_bytes());
    } catch (const std::bad_alloc&) {
      row.etc_oom = true;
    }
    // Dense baseline: every token global, so all pairs are scored.
    const std::size_t n = row.n_g + n_l;
    row.dense_oom = 3 * n * n * config.heads * sizeof(float) > args.dense_limit_bytes;
    if (!row.dense_oom && !row.etc_oom) {
      try {
        c.x = Matrix<float>(n, config.hidden);
        std::copy(c.xg.values().begin(), c.xg.values().end(), c.x.values().begin());
        std::copy(c.xl.values().begin(), c.xl.values().end(),
                  c.x.values().begin() + static_cast<std::ptrdiff_t>(c.xg.size()));
        c.dense_masks = full_masks(n, 0, row.r);
        c.dense_labels = sequence_labels(n, 0, row.r, config.clip_distance);
        global_local_attention(c.x, Matrix<float>(0, config.hidden), attention, c.dense_masks, c.dense_labels);
      } catch (const std::bad_alloc&) {
        row.dense_oom = true;
      }
    }
    rows.push_back(row);
    cases.push_back(std::move(c));
  }

  // Repeats rotate over lengths so slow drift affects every length alike.
  const Matrix<float> empty(0, config.hidden);
  for (std::size_t k = 0; k < args.repeats; ++k) {
    for (std::size_t i = 0; i < rows.size(); ++i) {
      Case& c = cases[i];
      if (!rows[i].etc_oom)
        c.etc_times.push_back(time_ms([&] { global_local_attention(c.xg, c.xl, attention, c.masks, c.labels); }));
      if (!rows[i].dense_oom)
        c.dense_times.push_back(
            time_ms([&] { global_local_attention(c.x, empty, attention, c.dense_masks, c.dense_labels); }));
    }
  }
  for (std::size_t i = 0; i < rows.size(); ++i) {
    rows[i].etc_ms = rows[i].etc_oom ? -1 : fastest(cases[i].etc_times);
    rows[i].dense_ms = rows[i].dense_oom ? -1 : fastest(cases[i].dense_times);
  }
  return rows;
}

std::string bench_csv(const std::vector<BenchRow>& rows) {
  std::ostringstream ss;
  ss << "n_l,n_g,r,etc_ms,dense_ms,pairs,peak_bytes\n";
  for (const BenchRow& r : rows)
    ss << r.n_l << ',' << r.n_g << ',' << r.r << ',' << (r.etc_oom ? std::string("OOM") : fmt(r.etc_ms, 3)) << ','
       << (r.dense_oom ? std::string("OOM") : fmt(r.dense_ms, 3)) << ',' << r.pairs << ',' << r.peak_bytes << '\n';
  return ss.str();
}

std::string bench_svg(const std::vector<BenchRow>& rows) {
  const double w = 640, h = 400, left = 70, right = 20, top = 30, bottom = 50;
  double max_x = 1, max_y = 1e-3;
  for (const BenchRow& r : rows) {
    max_x = std::max(max_x, static_cast<double>(r.n_l));
    if (!r.etc_oom) max_y = std::max(max_y, r.etc_ms);
    if (!r.dense_oom) max_y = std::max(max_y, r.dense_ms);
  }
  auto px = [&](double x) { return left + (w - left - right) * x / max_x; };
  auto py = [&](double y) { return h - bottom - (h - top - bottom) * y / max_y; };
  std::ostringstream s;
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h << "\" font-family=\"sans-serif\""
    << " font-size=\"12\">\n";
  s << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  s << "<text x=\"" << w / 2 << "\" y=\"18\" text-anchor=\"middle\">Attention forward time vs long input length</text>\n";
  s << "<line x1=\"" << left << "\" y1=\"" << py(0) << "\" x2=\"" << w - right << "\" y2=\"" << py(0)
    << "\" stroke=\"black\"/>\n";
  s << "<line x1=\"" << left << "\" y1=\"" << py(0) << "\" x2=\"" << left << "\" y2=\"" << top << "\" stroke=\"black\"/>\n";
  for (const BenchRow& r : rows)
    s << "<text x=\"" << fmt(px(static_cast<double>(r.n_l)), 1) << "\" y=\"" << h - bottom + 16
      << "\" text-anchor=\"middle\">" << r.n_l << "</text>\n";
  for (int k = 0; k <= 4; ++k) {
    const double y = max_y * k / 4;
    s << "<text x=\"" << left - 6 << "\" y=\"" << fmt(py(y) + 4, 1) << "\" text-anchor=\"end\">" << fmt(y, 1)
      << "</text>\n";
  }
  s << "<text x=\"" << w / 2 << "\" y=\"" << h - 12 << "\" text-anchor=\"middle\">n_l (tokens)</text>\n";
  s << "<text x=\"16\" y=\"" << h / 2 << "\" transform=\"rotate(-90 16 " << h / 2
    << ")\" text-anchor=\"middle\">forward ms</text>\n";
  auto series = [&](bool dense, const char* color, const char* label, double legend_y) {
    s << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"";
    for (const BenchRow& r : rows) {
      if (dense ? r.dense_oom : r.etc_oom) continue;
      s << fmt(px(static_cast<double>(r.n_l)), 1) << ',' << fmt(py(dense ? r.dense_ms : r.etc_ms), 1) << ' ';
    }
    s << "\"/>\n";
    s << "<line x1=\"" << left + 10 << "\" y1=\"" << legend_y << "\" x2=\"" << left + 30 << "\" y2=\"" << legend_y
      << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
    s << "<text x=\"" << left + 36 << "\" y=\"" << legend_y + 4 << "\">" << label << "</text>\n";
  };
  series(false, "#1f77b4", "ETC (global-local)", top + 10);
  series(true, "#d62728", "dense (all global)", top + 28);
  s << "</svg>\n";
  return s.str();
}

int cmd_bench(const CommonOptions& common, const BenchArgs& args, std::ostream& out, std::ostream&) {
  apply_threads(common, 1);
  const auto rows = run_bench(args, common.seed);
  const std::string csv = bench_csv(rows);
  out << csv;
  const std::string base = common.out.empty() ? "bench" : common.out;
  const std::string csv_path = base.size() > 4 && base.ends_with(".csv") ? base : base + ".csv";
  write_text(csv_path, csv);
  write_text(csv_path.substr(0, csv_path.size() - 4) + ".svg", bench_svg(rows));
  return kExitOk;
}

int cmd_pretrain(const CommonOptions& common, const PretrainArgs& args, std::ostream& out, std::ostream& err) {
  if (args.corpus.empty()) throw UsageError("pretrain needs --corpus");
  apply_threads(common, kernels::num_threads());
  const ModelConfig config = resolve_model_config(common);
  const TrainConfig train = resolve_train_config(common);
  return common.precision == Precision::kDouble ? run_pretrain<double>(config, train, common, args, out, err)
                                                : run_pretrain<float>(config, train, common, args, out, err);
}

int cmd_encode(const CommonOptions& common, const EncodeArgs& args, std::ostream& out, std::ostream&) {
  if (args.input.empty()) throw UsageError("encode needs --input");
  apply_threads(common, kernels::num_threads());
  ModelConfig config;
  std::optional<Checkpoint> checkpoint;
  if (!args.checkpoint.empty()) checkpoint = load_checkpoint(args.checkpoint);
  if (!common.config_path.empty() || !checkpoint || !checkpoint->config_json) {
    config = resolve_model_config(common);
  } else {
    config = model_config_from_json(*checkpoint->config_json);
    if (common.sharing) config.sharing = *common.sharing;
  }

  const std::string text = read_text(args.input);
  std::vector<EtcInput> inputs;
  if (looks_like_json(text)) {
    BuildOptions options;
    options.hard_g2l = args.hard_g2l;
    options.flat_structure = args.flat_structure;
    for (const auto& doc : parse_structured_documents(text, config))
      inputs.push_back(build_hierarchical_input(doc, options, config));
  } else {
    BuildOptions options;
    options.hard_g2l = args.hard_g2l;
    for (const auto& doc : tokenize_corpus(text, config.vocab_size)) inputs.push_back(build_flat_input(doc, config, options));
    if (inputs.empty()) throw UsageError(args.input + ": no sentences");
  }

  json result;
  result["config"] = json::parse(model_config_to_json(config));
  if (common.precision == Precision::kDouble) {
    const auto params = checkpoint ? to_parameters<double>(*checkpoint, config) : init_parameters<double>(config, common.seed);
    result["inputs"] = encode_all(inputs, params, config);
  } else {
    const auto params = checkpoint ? to_parameters<float>(*checkpoint, config) : init_parameters<float>(config, common.seed);
    result["inputs"] = encode_all(inputs, params, config);
  }
  const std::string dumped = result.dump() + "\n";
  if (common.out.empty()) {
    out << dumped;
  } else {
    write_text(common.out, dumped);
    out << "encoded " << inputs.size() << " input(s) into " << common.out << "\n";
  }
  return kExitOk;
}

int cmd_lift(const CommonOptions& common, const LiftArgs& args, std::ostream& out, std::ostream&) {
  if (args.source.empty()) throw UsageError("lift needs --src");
  if (common.out.empty()) throw UsageError("lift needs --out");
  ModelConfig config = resolve_model_config(common);
  const Checkpoint source = load_checkpoint(args.source);
  const auto lifted = lift_bert(source, config, config.sharing, common.seed);
  save_parameters(lifted, config, common.out);
  out << "lifted " << source.size() << " source tensors into " << common.out << " (" << to_string(config.sharing)
      << ")\n";
  return kExitOk;
}

}  // namespace etc::cli
