#include "gtta/harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <set>
#include <sstream>

#include "gtta/io.hpp"
#include "gtta/rng.hpp"

namespace gtta {

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(DataConfig, seed, class_count, side, train_samples, test_samples)

namespace {

template <typename T>
void put_axis(nlohmann::json& j, const char* key, const std::optional<std::vector<T>>& axis) {
  if (axis) j[key] = *axis;
}

template <typename T>
void get_axis(const nlohmann::json& j, const char* key, std::optional<std::vector<T>>& axis) {
  axis.reset();
  if (const auto it = j.find(key); it != j.end() && !it->is_null()) axis = it->get<std::vector<T>>();
}

template <typename T>
void read_opt(const nlohmann::json& j, const char* key, T& out) {
  if (const auto it = j.find(key); it != j.end()) out = it->get<T>();
}

/// Shortest decimal that parses back to the same double.
std::string format_double(double v) {
  char buf[64];
  for (int digits : {6, 10, 17}) {
    std::snprintf(buf, sizeof buf, "%.*g", digits, v);
    if (std::strtod(buf, nullptr) == v) break;
  }
  return buf;
}

std::string hash_of(const nlohmann::json& j) {
  const auto s = j.dump();
  return io::hex64(io::fnv1a(s.data(), s.size()));
}

bool stem_exists(const std::filesystem::path& stem) {
  auto m = stem;
  m += ".json";
  return std::filesystem::exists(m);
}

std::string sanitize(std::string_view s) {
  std::string out;
  for (char ch : s) out += (std::isalnum(static_cast<unsigned char>(ch)) || ch == '.' || ch == '-') ? ch : '_';
  return out;
}

}  // namespace

void to_json(nlohmann::json& j, const ExperimentConfig& c) {
  j = nlohmann::json::object();
  j["name"] = c.name;
  j["data"] = c.data;
  j["arch"] = c.arch;
  j["source_training"] = c.source_training;
  j["encoder_training"] = c.encoder_training;
  j["decoder_training"] = {{"lr", c.decoder_training.lr},
                           {"batch_size", c.decoder_training.batch_size},
                           {"seed", c.decoder_training.seed}};
  j["schedule"] = to_string(c.schedule);
  auto kinds = nlohmann::json::array();
  for (auto k : c.corruptions) kinds.push_back(to_string(k));
  j["corruptions"] = kinds;
  j["batches_per_domain"] = c.batches_per_domain;
  auto methods = nlohmann::json::array();
  for (const auto& m : c.methods) {
    nlohmann::json e = m.adapt;
    e["label"] = m.label;
    methods.push_back(e);
  }
  j["methods"] = methods;
  nlohmann::json sweep = nlohmann::json::object();
  put_axis(sweep, "lambdas", c.sweep.lambdas);
  put_axis(sweep, "updates", c.sweep.updates);
  put_axis(sweep, "fractions", c.sweep.fractions);
  put_axis(sweep, "windows", c.sweep.windows);
  j["sweep"] = sweep;
  j["seeds"] = c.seeds;
  j["out"] = c.out;
}

void from_json(const nlohmann::json& j, ExperimentConfig& c) {
  if (!j.is_object()) throw ConfigurationError("experiment config must be a JSON object");
  try {
    c = ExperimentConfig{};
    read_opt(j, "name", c.name);
    read_opt(j, "data", c.data);
    read_opt(j, "arch", c.arch);
    read_opt(j, "source_training", c.source_training);
    read_opt(j, "encoder_training", c.encoder_training);
    if (const auto it = j.find("decoder_training"); it != j.end()) {
      read_opt(*it, "lr", c.decoder_training.lr);
      read_opt(*it, "batch_size", c.decoder_training.batch_size);
      read_opt(*it, "seed", c.decoder_training.seed);
    }
    if (j.contains("schedule")) c.schedule = parse_schedule_mode(j.at("schedule").get<std::string>());
    if (j.contains("corruptions")) {
      c.corruptions.clear();
      for (const auto& k : j.at("corruptions")) c.corruptions.push_back(parse_corruption(k.get<std::string>()));
    }
    read_opt(j, "batches_per_domain", c.batches_per_domain);
    if (j.contains("methods")) {
      for (const auto& e : j.at("methods")) {
        MethodEntry m;
        nlohmann::json a = e;
        a.erase("label");
        m.adapt = a.get<AdaptConfig>();
        m.label = e.value("label", std::string(to_string(m.adapt.method)));
        c.methods.push_back(std::move(m));
      }
    }
    if (const auto it = j.find("sweep"); it != j.end() && it->is_object()) {
      get_axis(*it, "lambdas", c.sweep.lambdas);
      get_axis(*it, "updates", c.sweep.updates);
      get_axis(*it, "fractions", c.sweep.fractions);
      get_axis(*it, "windows", c.sweep.windows);
    }
    read_opt(j, "seeds", c.seeds);
    read_opt(j, "out", c.out);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigurationError(std::string("experiment config: ") + e.what());
  } catch (const ParameterError& e) {
    throw ConfigurationError(std::string("experiment config: ") + e.what());
  }
}

void ExperimentConfig::validate() const {
  const auto fail = [](const std::string& what) { throw ConfigurationError("experiment config: " + what); };
  if (out.empty()) fail("out must name a directory");
  if (methods.empty()) fail("no methods");
  if (seeds.empty()) fail("no seeds");
  if (corruptions.empty()) fail("no corruptions");
  if (batches_per_domain < 1) fail("batches_per_domain must be >= 1");
  if (data.class_count < 2 || data.side < 16 || data.train_samples < data.class_count || data.test_samples < 1)
    fail("invalid data sizes");
  if (data.class_count != arch.class_count || data.side != arch.side) fail("data and arch disagree");
  try {
    arch.validate();
  } catch (const std::exception& e) {
    fail(e.what());
  }
  std::set<std::string> labels;
  for (const auto& m : methods) {
    if (m.label.empty()) fail("empty method label");
    if (!labels.insert(m.label).second) fail("duplicate method label '" + m.label + "'");
    m.adapt.validate();
  }
  const auto check_axis = [&](const char* name, const auto& axis) {
    if (!axis) return;
    if (axis->empty()) fail(std::string("sweep axis '") + name + "' is empty");
    for (const auto v : *axis)
      if (!std::isfinite(static_cast<double>(v))) fail(std::string("sweep axis '") + name + "' has a non-finite value");
  };
  check_axis("lambdas", sweep.lambdas);
  check_axis("updates", sweep.updates);
  check_axis("fractions", sweep.fractions);
  check_axis("windows", sweep.windows);
  for (const auto& cell : expand_cells(*this)) cell.adapt.validate();
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
  return io::read_json(path).get<ExperimentConfig>();
}

std::vector<std::string> preset_names() {
  return {"continual-toy", "gradual-toy", "single-sample-toy", "ablation-mixup", "ablation-updates",
          "ablation-source-fraction"};
}

namespace {

MethodEntry entry(Method m, std::string label = {}) {
  MethodEntry e{label.empty() ? std::string(to_string(m)) : std::move(label), AdaptConfig::defaults_for(m)};
  // Desk-scale step size; the network and data are tiny compared to the benchmark models.
  e.adapt.lr = 1e-3;
  return e;
}

}  // namespace

ExperimentConfig preset(std::string_view name) {
  ExperimentConfig c;
  c.name = std::string(name);
  c.out = "results/" + c.name;
  if (name == "continual-toy") {
    c.methods = {entry(Method::source), entry(Method::bn_variant, "bn1"), entry(Method::gtta_mix)};
  } else if (name == "gradual-toy") {
    c.schedule = ScheduleMode::gradual;
    c.methods = {entry(Method::source), entry(Method::bn_variant, "bn1"), entry(Method::gtta_mix)};
  } else if (name == "single-sample-toy") {
    c.methods = {entry(Method::gtta_mix)};
    c.sweep.windows = std::vector<int>{0, 32};
  } else if (name == "ablation-mixup") {
    c.methods = {entry(Method::gtta_mix)};
    c.sweep.lambdas = std::vector<double>{0.0, 0.1, 0.2, 1.0 / 3.0, 0.5};
  } else if (name == "ablation-updates") {
    c.methods = {entry(Method::gtta_mix), entry(Method::self_training_only)};
    c.sweep.updates = std::vector<int>{1, 2, 4, 8};
  } else if (name == "ablation-source-fraction") {
    c.methods = {entry(Method::gtta_mix)};
    c.sweep.fractions = std::vector<double>{1.0, 0.5, 0.25, 0.1, 0.05, 0.01};
  } else {
    std::string known;
    for (const auto& n : preset_names()) known += " " + n;
    throw ConfigurationError("unknown preset '" + std::string(name) + "'; known:" + known);
  }
  return c;
}

void apply_override(ExperimentConfig& c, std::string_view key, std::string_view value) {
  nlohmann::json v;
  try {
    v = nlohmann::json::parse(value);
  } catch (const nlohmann::json::parse_error&) {
    v = std::string(value);
  }
  if (key.empty()) throw ConfigurationError("empty override key");
  nlohmann::json j = c;
  const auto dot = key.find('.');
  const std::string head(key.substr(0, dot));
  if (head != "methods" && j.contains(head)) {
    if (dot == std::string_view::npos) {
      j[head] = v;
    } else {
      const std::string tail(key.substr(dot + 1));
      if (!j[head].is_object()) throw ConfigurationError("'" + head + "' has no sub-keys");
      if (head != "sweep" && !j[head].contains(tail)) throw ConfigurationError("unknown key '" + std::string(key) + "'");
      j[head][tail] = v;
    }
    c = j.get<ExperimentConfig>();
    return;
  }
  int applied = 0;
  for (auto& m : c.methods) {
    // The unadapted baseline is pinned to source statistics.
    if (m.adapt.method == Method::source && head == "bn") continue;
    const nlohmann::json a = m.adapt;
    const bool has = dot == std::string_view::npos ? a.contains(head)
                                                   : a.contains(head) && a[head].contains(std::string(key.substr(dot + 1)));
    if (!has) continue;
    apply_override(m.adapt, key, v);
    ++applied;
  }
  if (!applied) throw ConfigurationError("override '" + std::string(key) + "' matches no experiment or method key");
}

std::vector<MethodEntry> expand_cells(const ExperimentConfig& c) {
  std::vector<MethodEntry> cells;
  for (const auto& base : c.methods) {
    std::vector<std::pair<AdaptConfig, std::vector<std::string>>> grid{{base.adapt, {}}};
    const auto expand = [&](const auto& axis, const char* tag, bool applies, auto set) {
      if (!axis || !applies) return;
      decltype(grid) next;
      for (const auto& [cfg, tags] : grid)
        for (const auto v : *axis) {
          auto a = cfg;
          set(a, v);
          auto t = tags;
          t.push_back(std::string(tag) + "=" + format_double(static_cast<double>(v)));
          next.emplace_back(std::move(a), std::move(t));
        }
      grid = std::move(next);
    };
    expand(c.sweep.lambdas, "lambda", base.adapt.mixup.has_value(), [](AdaptConfig& a, double v) { a.mixup->lambda = v; });
    expand(c.sweep.updates, "updates", base.adapt.performs_updates(), [](AdaptConfig& a, int v) { a.updates_per_batch = v; });
    expand(c.sweep.fractions, "fraction", base.adapt.uses_source(), [](AdaptConfig& a, double v) { a.source_fraction = v; });
    expand(c.sweep.windows, "window", true, [](AdaptConfig& a, int v) { a.window = v; });
    for (auto& [cfg, tags] : grid) {
      std::string label = base.label;
      for (std::size_t i = 0; i < tags.size(); ++i) label += (i ? "," : "[") + tags[i];
      if (!tags.empty()) label += "]";
      cells.push_back({std::move(label), std::move(cfg)});
    }
  }
  return cells;
}

double error_rate(std::span<const int> predictions, std::span<const int> labels) {
  if (predictions.empty()) throw ParameterError("error_rate: empty input");
  if (predictions.size() != labels.size()) throw ParameterError("error_rate: length mismatch");
  std::size_t wrong = 0;
  for (std::size_t i = 0; i < predictions.size(); ++i) wrong += predictions[i] != labels[i];
  return 100.0 * static_cast<double>(wrong) / static_cast<double>(predictions.size());
}

void ResultTable::add(ResultRow row) {
  if (!(row.error >= 0.0 && row.error <= 100.0)) throw ParameterError("ResultTable: error rate outside [0,100]");
  rows_.push_back(std::move(row));
}

void ResultTable::add(std::string_view method, std::uint64_t seed, const SequenceReport& report) {
  for (const auto& d : report.domains)
    add(ResultRow{std::string(method), d.index, d.corruption.kind, d.corruption.severity, seed, d.error_rate()});
}

std::vector<std::string> ResultTable::methods() const {
  std::vector<std::string> out;
  for (const auto& r : rows_)
    if (std::find(out.begin(), out.end(), r.method) == out.end()) out.push_back(r.method);
  return out;
}

ResultTable ResultTable::filter_method(std::string_view method) const {
  ResultTable t;
  for (const auto& r : rows_)
    if (r.method == method) t.rows_.push_back(r);
  return t;
}

std::vector<double> ResultTable::per_domain_mean(std::string_view method) const {
  std::vector<double> sum;
  std::vector<int> count;
  for (const auto& r : rows_) {
    if (r.method != method) continue;
    if (r.domain >= sum.size()) {
      sum.resize(r.domain + 1, 0.0);
      count.resize(r.domain + 1, 0);
    }
    sum[r.domain] += r.error;
    ++count[r.domain];
  }
  for (std::size_t d = 0; d < sum.size(); ++d) sum[d] = count[d] ? sum[d] / count[d] : 0.0;
  return sum;
}

double ResultTable::overall_mean(std::string_view method) const {
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& r : rows_)
    if (r.method == method) {
      sum += r.error;
      ++n;
    }
  if (!n) throw ParameterError("overall_mean: no rows for method '" + std::string(method) + "'");
  return sum / static_cast<double>(n);
}

void ResultTable::write_csv(std::ostream& os) const {
  os << "method,domain,kind,severity,seed,error\n";
  for (const auto& r : rows_)
    os << r.method << ',' << r.domain << ',' << to_string(r.kind) << ',' << r.severity << ',' << r.seed << ','
       << format_double(r.error) << '\n';
}

void ResultTable::write_csv(const std::filesystem::path& path) const {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw ConfigurationError("cannot write " + path.string());
  write_csv(os);
  if (!os) throw ConfigurationError("write failed: " + path.string());
}

ResultTable ResultTable::read_csv(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ParameterError("cannot read " + path.string());
  std::string line;
  std::getline(is, line);
  if (line != "method,domain,kind,severity,seed,error") throw ParameterError(path.string() + ": unexpected header");
  ResultTable t;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    // Labels may contain commas inside their brackets; the last five fields never do.
    std::vector<std::string> f;
    std::size_t end = line.size();
    for (int k = 0; k < 5; ++k) {
      const auto pos = line.rfind(',', end - 1);
      if (pos == std::string::npos) throw ParameterError(path.string() + ": malformed row '" + line + "'");
      f.insert(f.begin(), line.substr(pos + 1, end - pos - 1));
      end = pos;
    }
    ResultRow r;
    r.method = line.substr(0, end);
    r.domain = std::stoul(f[0]);
    r.kind = parse_corruption(f[1]);
    r.severity = std::stoi(f[2]);
    r.seed = std::stoull(f[3]);
    r.error = std::strtod(f[4].c_str(), nullptr);
    t.add(std::move(r));
  }
  return t;
}

double severity5_mean(const ResultTable& table) {
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& r : table.rows())
    if (r.severity == 5) {
      sum += r.error;
      ++n;
    }
  if (!n) throw ParameterError("severity5_mean: no severity-5 rows");
  return sum / static_cast<double>(n);
}

double severity5_mean(const ResultTable& table, std::string_view method) {
  return severity5_mean(table.filter_method(method));
}

namespace {

void logln(std::ostream* log, const std::string& s) {
  if (log) *log << s << std::endl;
}

nlohmann::json source_key(const ExperimentConfig& c) {
  return {{"data", c.data}, {"arch", c.arch}, {"source_training", c.source_training}};
}

std::filesystem::path cache_dir(const ExperimentConfig& c) { return std::filesystem::path(c.out) / "cache"; }

}  // namespace

ExperimentAssets prepare_assets(const ExperimentConfig& c, std::ostream* log) {
  ExperimentAssets a{generate_dataset(c.data.seed, c.data.class_count, c.data.train_samples, c.data.side),
                     generate_dataset(hash_key({c.data.seed, 0x7E57}), c.data.class_count, c.data.test_samples,
                                      c.data.side),
                     ClassifierF(c.arch, c.source_training.seed),
                     {}};
  const auto stem = cache_dir(c) / ("source-" + hash_of(source_key(c)));
  if (stem_exists(stem)) {
    a.source = load_checkpoint(stem);
    logln(log, "loaded source model " + stem.string());
  } else {
    logln(log, "training source model (" + std::to_string(c.source_training.epochs) + " epochs)");
    a.source = train_source(a.train, c.arch, c.source_training).model;
    std::filesystem::create_directories(stem.parent_path());
    save_checkpoint(a.source, stem);
  }
  return a;
}

const StyleNetwork& style_network(ExperimentAssets& assets, const ExperimentConfig& c, const StyleConfig& style,
                                  std::ostream* log) {
  const StyleArch arch{c.arch.in_channels, c.arch.side, 16, 32};
  auto dec_cfg = c.decoder_training;
  dec_cfg.iterations = style.pretrain_iters;
  dec_cfg.lambda_s = style.lambda_s;
  const nlohmann::json key = {{"data", c.data}, {"arch", arch}, {"encoder", c.encoder_training}, {"decoder", dec_cfg}};
  const auto h = hash_of(key);
  if (const auto it = assets.styles.find(h); it != assets.styles.end()) return it->second;
  const auto enc_stem = cache_dir(c) / ("style-encoder-" + h);
  const auto dec_stem = cache_dir(c) / ("style-decoder-" + h);
  std::optional<StyleNetwork> net;
  if (stem_exists(enc_stem) && stem_exists(dec_stem)) {
    net.emplace(StyleNetwork{load_encoder_checkpoint(enc_stem), load_decoder_checkpoint(dec_stem)});
    logln(log, "loaded style network " + h);
  } else {
    logln(log, "pretraining style network (" + std::to_string(c.encoder_training.iterations) + " + " +
                   std::to_string(dec_cfg.iterations) + " iterations)");
    auto enc = pretrain_encoder(assets.train, arch, c.encoder_training);
    auto dec = pretrain_decoder(enc, assets.train.images, dec_cfg);
    std::filesystem::create_directories(cache_dir(c));
    save_checkpoint(enc, enc_stem, c.encoder_training.seed);
    save_checkpoint(dec, dec_stem, dec_cfg.seed);
    net.emplace(StyleNetwork{std::move(enc), std::move(dec)});
  }
  return assets.styles.emplace(h, std::move(*net)).first->second;
}

namespace {

struct ProgressCtx {
  std::ostream* log;
  std::string prefix;
};

void progress_line(const DomainResult& d, void* p) {
  auto* ctx = static_cast<ProgressCtx*>(p);
  if (!ctx->log) return;
  std::ostringstream s;
  s << ctx->prefix << " domain " << d.index << " " << to_string(d.corruption.kind) << "-" << d.corruption.severity
    << " error " << std::fixed << std::setprecision(2) << d.error_rate() << "%";
  logln(ctx->log, s.str());
}

void ensure_writable(const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw ConfigurationError("cannot create output directory " + dir.string() + ": " + ec.message());
  const auto probe = dir / ".write-probe";
  {
    std::ofstream os(probe);
    if (!os || !(os << "ok")) throw ConfigurationError("output directory not writable: " + dir.string());
  }
  std::filesystem::remove(probe, ec);
}

}  // namespace

ExperimentResult run_experiment(const ExperimentConfig& c, std::ostream* log) {
  c.validate();
  const std::filesystem::path out(c.out);
  ensure_writable(out);
  ensure_writable(out / "runs");
  io::write_json(out / "experiment.json", nlohmann::json(c));

  auto assets = prepare_assets(c, log);
  ExperimentResult result;
  result.source_clean_accuracy = accuracy(assets.source, assets.test);
  {
    std::ostringstream s;
    s << "source clean accuracy " << std::fixed << std::setprecision(2) << 100.0 * result.source_clean_accuracy << "%";
    logln(log, s.str());
  }
  const auto schedule = build_schedule(c.schedule, c.corruptions, c.batches_per_domain);
  for (const auto& cell : expand_cells(c)) {
    std::optional<StyleNetwork> style;
    if (cell.adapt.style) style = style_network(assets, c, *cell.adapt.style, log);
    for (const auto seed : c.seeds) {
      ProgressCtx ctx{log, "[" + cell.label + " seed=" + std::to_string(seed) + "]"};
      try {
        Adapter adapter(assets.source, cell.adapt, &assets.train, style, seed);
        TestStream stream(assets.test, schedule, cell.adapt.batch_size_test, seed);
        const auto report = cell.adapt.window > 0
                                ? sliding_window_adapt(adapter, stream, cell.adapt.window, progress_line, &ctx)
                                : run_sequence(adapter, stream, progress_line, &ctx);
        result.table.add(cell.label, seed, report);
        nlohmann::json run = {{"label", cell.label}, {"seed", seed}, {"config", cell.adapt}, {"report", report}};
        io::write_json(out / "runs" / (sanitize(cell.label) + "__seed" + std::to_string(seed) + ".json"), run);
      } catch (const std::exception& e) {
        result.failures.push_back({cell.label, seed, e.what()});
        logln(log, ctx.prefix + " FAILED: " + e.what());
      }
    }
  }
  result.table.write_csv(out / "results.csv");
  return result;
}

void print_report(const ResultTable& table, std::ostream& os) {
  if (table.empty()) {
    os << "(no results)\n";
    return;
  }
  // Column layout from the first method's domains; every method shares the schedule.
  struct Column {
    std::string name;
    std::vector<std::size_t> domains;
  };
  std::vector<std::pair<std::size_t, ResultRow>> domains;
  for (const auto& r : table.rows())
    if (r.method == table.rows().front().method &&
        std::none_of(domains.begin(), domains.end(), [&](const auto& d) { return d.first == r.domain; }))
      domains.emplace_back(r.domain, r);
  std::sort(domains.begin(), domains.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  std::vector<Column> cols;
  const bool per_domain = domains.size() <= 10;
  for (const auto& [d, r] : domains) {
    const std::string name = per_domain ? std::string(to_string(r.kind)) + "-" + std::to_string(r.severity)
                                        : std::string(to_string(r.kind));
    auto it = std::find_if(cols.begin(), cols.end(), [&](const Column& c) { return c.name == name; });
    if (it == cols.end()) {
      cols.push_back({name, {}});
      it = cols.end() - 1;
    }
    it->domains.push_back(d);
  }
  std::size_t label_w = 6;
  for (const auto& m : table.methods()) label_w = std::max(label_w, m.size());
  std::size_t col_w = 8;
  for (const auto& c : cols) col_w = std::max(col_w, c.name.size() + 1);
  const bool has_sev5 = std::any_of(table.rows().begin(), table.rows().end(), [](const auto& r) { return r.severity == 5; });
  os << std::left << std::setw(static_cast<int>(label_w)) << "method";
  for (const auto& c : cols) os << std::right << std::setw(static_cast<int>(col_w)) << c.name;
  os << std::setw(8) << "mean";
  if (!per_domain && has_sev5) os << std::setw(8) << "sev5";
  os << "\n";
  os << std::fixed << std::setprecision(2);
  for (const auto& m : table.methods()) {
    const auto means = table.per_domain_mean(m);
    os << std::left << std::setw(static_cast<int>(label_w)) << m << std::right;
    for (const auto& c : cols) {
      double s = 0.0;
      for (auto d : c.domains) s += d < means.size() ? means[d] : 0.0;
      os << std::setw(static_cast<int>(col_w)) << s / static_cast<double>(c.domains.size());
    }
    os << std::setw(8) << table.overall_mean(m);
    if (!per_domain && has_sev5) os << std::setw(8) << severity5_mean(table, m);
    os << "\n";
  }
  os.unsetf(std::ios::floatfield);
}

}  // namespace gtta
