// bitstorm command-line front end.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "bitstorm/bitstorm.hpp"

using namespace bitstorm;
using nlohmann::json;

namespace {

std::string g_command_line;

// Every output file opens with these lines; nothing time-dependent goes in.
std::string comment_header(const std::string& command, std::uint64_t seed, const json& config) {
  std::ostringstream os;
  os << "# bitstorm " << version << '\n'
     << "# command: " << command << '\n'
     << "# command_line: " << g_command_line << '\n'
     << "# seed: " << seed << '\n'
     << "# config: " << config.dump() << '\n';
  return os.str();
}

std::string num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void write_text(const std::string& path, const std::string& text) {
  if (path.empty() || path == "-") {
    std::cout << text;
    std::cout.flush();
    return;
  }
  auto os = io::open_out(path);
  os << text;
  if (!os) throw FormatError(FormatErrc::io, "write failed: " + path);
}

// ---------------------------------------------------------------------------

struct GenDataFlags {
  std::string kind = "two-moons";
  std::size_t n = 1000;
  double noise = 0.2;
  std::size_t classes = 3;
  std::uint64_t seed = 7;
  std::string out = "data";
};

int cmd_gen_data(const GenDataFlags& f) {
  const auto kind = parse_synthetic_kind(f.kind);
  const auto data = make_synthetic(kind, f.n, f.noise, f.seed, f.classes);
  const auto splits = split_dataset(data);
  json meta = {{"command_line", g_command_line}, {"seed", f.seed}, {"kind", f.kind}, {"n", f.n},
               {"noise", f.noise}, {"split", "60/20/20"}};
  if (kind == SyntheticKind::gaussian_blobs) meta["classes"] = f.classes;
  const std::pair<const char*, const Dataset*> parts[] = {
      {"train", &splits.train}, {"val", &splits.validation}, {"test", &splits.test}};
  for (const auto& [name, part] : parts) {
    json m = meta;
    m["part"] = name;
    const std::string path = f.out + "." + name + ".bstd";
    store_dataset(*part, path, m);
    std::cout << path << ": " << part->size() << " examples\n";
  }
  return 0;
}

// ---------------------------------------------------------------------------

struct TrainFlags {
  std::string train, val;
  std::string topology = "32FC-16FC-2SVM";
  std::string activation = "sign";
  bool affine_norm = false;
  std::size_t epochs = 50;
  double learning_rate = TrainConfig{}.learning_rate;
  double lr_decay = TrainConfig{}.lr_decay;
  std::size_t batch_size = TrainConfig{}.batch_size;
  std::string projection = "ternary";
  double ste_window = 1.0;
  std::uint64_t seed = 0;
  std::string out = "model.bstm";
  std::string log;
};

int cmd_train(const TrainFlags& f) {
  if (f.epochs < 1) throw std::invalid_argument("--epochs must be >= 1");
  if (!(f.learning_rate > 0.0)) throw std::invalid_argument("--lr must be > 0");
  const auto train = load_dataset(f.train);
  const auto val = load_dataset(f.val);
  if (train.example_shape != val.example_shape || train.class_count != val.class_count) {
    throw std::invalid_argument("train and validation sets disagree on shape or class count");
  }
  auto model = build_model(f.topology, train.example_shape, parse_activation(f.activation), f.affine_norm);
  if (model.class_count != train.class_count) {
    throw std::invalid_argument("topology has " + std::to_string(model.class_count) + " outputs but data has " +
                                std::to_string(train.class_count) + " classes");
  }
  initialize(model, f.seed);

  TrainConfig cfg;
  cfg.epochs = f.epochs;
  cfg.learning_rate = f.learning_rate;
  cfg.lr_decay = f.lr_decay;
  cfg.batch_size = f.batch_size;
  cfg.projection = parse_train_projection(f.projection);
  cfg.ste_window = f.ste_window;
  cfg.seed = f.seed;
  const json config = {{"train", f.train},
                       {"val", f.val},
                       {"topology", f.topology},
                       {"activation", f.activation},
                       {"affine_norm", f.affine_norm},
                       {"epochs", cfg.epochs},
                       {"learning_rate", cfg.learning_rate},
                       {"lr_decay", cfg.lr_decay},
                       {"batch_size", cfg.batch_size},
                       {"projection", to_string(cfg.projection)},
                       {"ste_window", cfg.ste_window},
                       {"optimizer", "plain SGD, exponential decay per epoch"}};

  const auto result = train_and_select(model, train, val, cfg);

  json meta = config;
  meta["command_line"] = g_command_line;
  meta["seed"] = f.seed;
  meta["selected_epoch"] = result.selected_epoch;
  meta["selected_val_error"] = result.selected_val_error;
  store_model(result.model, f.out, meta);

  std::ostringstream csv;
  csv << comment_header("train", f.seed, config) << "epoch,train_loss,val_error,selected_flag\n";
  for (const auto& row : result.log) {
    csv << row.epoch << ',' << num(row.train_loss) << ',' << num(row.val_error) << ',' << (row.selected ? 1 : 0)
        << '\n';
  }
  if (!f.log.empty()) write_text(f.log, csv.str());
  std::cout << "selected epoch " << result.selected_epoch << " with validation error "
            << num(result.selected_val_error) << "; model written to " << f.out << '\n';
  return 0;
}

// ---------------------------------------------------------------------------

struct SamplerFlags {
  std::string sampler = "exact";
  std::string select_source = "ideal-exact";
  unsigned n_inputs = 8;
  unsigned modulator_width = 16;
  std::size_t lanes = 1;
  std::string projection = "ternary";

  void add(CLI::App* app) {
    app->add_option("--sampler", sampler, "exact or hardware")->check(CLI::IsMember({"exact", "hardware"}))
        ->capture_default_str();
    app->add_option("--select-source", select_source, "ideal-exact, independent-lfsr, shared-prbs, single-lfsr")
        ->capture_default_str();
    app->add_option("--n-inputs", n_inputs, "multiplexer inputs N")->capture_default_str();
    app->add_option("--modulator-width", modulator_width, "modulator target width M")->capture_default_str();
    app->add_option("--lanes", lanes, "parallel rounder lanes")->capture_default_str();
    app->add_option("--projection", projection, "ternary or binary")->capture_default_str();
  }

  Sampler resolve() const {
    if (sampler == "exact") return ExactSampler{};
    HardwareSampler hw{{n_inputs, hw::parse_select_source(select_source), modulator_width}, lanes};
    hw.rounder.validate();
    return hw;
  }

  json describe_json() const {
    json j = {{"sampler", sampler}, {"projection", projection}};
    if (sampler == "hardware") {
      j["select_source"] = select_source;
      j["n_inputs"] = n_inputs;
      j["modulator_width"] = modulator_width;
      j["lanes"] = lanes;
    }
    return j;
  }
};

struct EvalFlags {
  std::string model, data;
  std::string mode = "float";
  std::size_t k = 1;
  std::uint64_t seed = 0;
  SamplerFlags sampler;
  std::string out;
};

int cmd_eval(const EvalFlags& f) {
  const auto loaded = load_model(f.model);
  const auto data = load_dataset(f.data);
  json config = {{"model", f.model}, {"data", f.data}, {"mode", f.mode}, {"clipped_on_load", loaded.clipped},
                 {"train_projection", loaded.meta.value("projection", "unknown")}};
  double error = 0.0;
  if (f.mode == "float") {
    error = error_rate(loaded.model, data);
  } else {
    config.update(f.sampler.describe_json());
    const auto mode = parse_projection_mode(f.sampler.projection);
    const Sampler sampler = f.sampler.resolve();
    if (f.mode == "single-projection") {
      error = error_rate(sample_member(loaded.model, mode, sampler, member_stream(f.seed, 0, 0)), data);
    } else if (f.mode == "ensemble") {
      config["k"] = f.k;
      EnsembleConfig ec;
      ec.sizes = {f.k};
      ec.trials = 1;
      ec.base_seed = f.seed;
      ec.projection = mode;
      ec.sampler = sampler;
      error = ensemble_error_curve(loaded.model, data, ec).points.front().mean_error;
    } else {
      throw std::invalid_argument("unknown --mode '" + f.mode + "'");
    }
  }
  std::ostringstream csv;
  csv << comment_header("eval", f.seed, config) << "mode,k,error_rate,seed\n"
      << f.mode << ',' << (f.mode == "float" ? 0 : f.mode == "ensemble" ? f.k : 1) << ',' << num(error) << ','
      << f.seed << '\n';
  write_text(f.out, csv.str());
  return 0;
}

// ---------------------------------------------------------------------------

struct SweepFlags {
  std::string model, data;
  std::vector<std::size_t> sizes{1, 2, 4, 8, 16, 32};
  std::size_t trials = 20;
  std::string aggregation = "score-sum";
  std::string sampling = "nested";
  std::uint64_t seed = 0;
  SamplerFlags sampler;
  std::string out;
};

int cmd_ensemble_sweep(const SweepFlags& f) {
  const auto loaded = load_model(f.model);
  const auto data = load_dataset(f.data);
  EnsembleConfig ec;
  ec.sizes = f.sizes;
  ec.trials = f.trials;
  ec.base_seed = f.seed;
  ec.projection = parse_projection_mode(f.sampler.projection);
  ec.sampler = f.sampler.resolve();
  if (f.aggregation == "score-sum") {
    ec.aggregation = Aggregation::score_sum;
  } else if (f.aggregation == "majority-vote") {
    ec.aggregation = Aggregation::majority_vote;
  } else {
    throw std::invalid_argument("unknown --aggregation '" + f.aggregation + "'");
  }
  if (f.sampling == "nested") {
    ec.sampling = MemberSampling::nested;
  } else if (f.sampling == "independent") {
    ec.sampling = MemberSampling::independent;
  } else {
    throw std::invalid_argument("unknown --sampling '" + f.sampling + "'");
  }
  const auto report = ensemble_error_curve(loaded.model, data, ec);

  json config = {{"model", f.model}, {"data", f.data}, {"sizes", f.sizes}, {"trials", f.trials},
                 {"aggregation", f.aggregation}, {"sampling", f.sampling}, {"clipped_on_load", loaded.clipped},
                 {"train_projection", loaded.meta.value("projection", "unknown")},
                 {"float_error", error_rate(loaded.model, data)}};
  config.update(f.sampler.describe_json());
  std::ostringstream csv;
  csv << comment_header("ensemble-sweep", f.seed, config)
      << "K,mean_error,std_error,trials,sampler_mode,projection_mode,seed\n";
  for (const auto& p : report.points) {
    csv << p.k << ',' << num(p.mean_error) << ',' << num(p.std_error) << ',' << f.trials << ','
        << describe(ec.sampler) << ',' << to_string(ec.projection) << ',' << f.seed << '\n';
  }
  write_text(f.out, csv.str());
  return 0;
}

// ---------------------------------------------------------------------------

struct HwVerifyFlags {
  unsigned n_inputs = 8;
  unsigned modulator_width = 16;
  std::string select_source = "independent-lfsr";
  std::uint64_t cycles = 100000;
  std::uint64_t seed = 0;
  std::string out;
};

int cmd_hw_verify(const HwVerifyFlags& f) {
  const hw::MuxRounderConfig cfg{f.n_inputs, hw::parse_select_source(f.select_source), f.modulator_width};
  cfg.validate();
  const unsigned n = cfg.n_inputs, m = cfg.modulator_width;
  const json config = {{"n_inputs", n}, {"modulator_width", m}, {"select_source", f.select_source},
                       {"cycles", f.cycles}};
  std::ostringstream rows, checks;
  bool ok = true;
  auto check = [&](const std::string& name, bool pass, const std::string& detail) {
    ok &= pass;
    checks << "# check " << name << ": " << (pass ? "PASS" : "FAIL") << " (" << detail << ")\n";
  };

  // Exact rows: analytic P(out = 1) from the select distribution, for every
  // input pattern (evenly spaced patterns when 2^N is too many to list).
  const std::uint64_t full = std::uint64_t{1} << n;
  const std::uint64_t stride = n <= 12 ? 1 : full >> 12;
  Rational worst;
  const Rational bound(1, full);
  for (std::uint64_t bits = 0; bits < full; bits += stride) {
    const QFraction q(bits, n);
    const Rational p = hw::exact_output_probability(q);
    const Rational err = abs_diff(p, Rational(bits, full));
    if (worst < err) worst = err;
    rows << "exact," << n << ',' << m << ',' << num(q.value()) << ',' << num(p.to_double()) << ','
         << num(p.to_double()) << ",0," << num(err.to_double()) << '\n';
  }
  check("mux max abs error <= 2^-N", worst <= bound, worst.str() + " vs " + bound.str());

  const auto specs = hw::select_bit_probabilities(n);
  check("select-bit factorization", hw::factorized_select_distribution(specs) == hw::select_distribution(n),
        "N=" + std::to_string(n));
  check("product identity", hw::fermat_product(n) == full - 1,
        std::to_string(hw::fermat_product(n)) + " = 2^" + std::to_string(n) + " - 1");

  if (m <= 20) {
    for (const auto& spec : specs) {
      const QFraction target = hw::modulator_target(spec, m);
      std::uint64_t ones = 0;
      for (std::uint64_t r = 0; r < (std::uint64_t{1} << m); ++r) ones += hw::daalen_bit_packed(target, r);
      check("modulator exact, select bit " + std::to_string(spec.index), ones == target.bits(),
            std::to_string(ones) + "/2^" + std::to_string(m) + " target " + std::to_string(target.bits()));
    }
  } else {
    checks << "# check modulator exact: skipped (M > 20)\n";
  }

  const auto period = hw::measure_period(hw::Lfsr());
  check("LFSR period", period && period->period == 65535 && period->ones == 32768,
        period ? std::to_string(period->period) + " states, " + std::to_string(period->ones) + " ones" : "no cycle");

  // Simulated rows through the configured select source.
  const auto quantized = hw::quantized_select_distribution(n, m);
  {
    const auto ideal_dist = hw::select_distribution(n);
    double worst_sel = 0.0;
    for (unsigned i = 0; i < n; ++i) worst_sel = std::max(worst_sel, std::fabs(quantized[i] - ideal_dist[i].to_double()));
    checks << "# info select distribution perturbation from " << m << "-bit modulator targets: max |dP| = "
           << num(worst_sel) << '\n';
  }
  const bool ideal = cfg.select_source == hw::SelectSource::ideal_exact;
  for (unsigned eighth = 0; eighth <= 8; ++eighth) {
    const auto q = to_sign_magnitude(eighth / 8.0, n).magnitude;
    hw::SelectStream stream(cfg, RandomSource(f.seed, eighth));
    std::uint64_t ones = 0;
    for (std::uint64_t c = 0; c < f.cycles; ++c) ones += hw::mux_out(q.bits(), n, stream.next());
    const double analytic = hw::exact_output_probability(q).to_double();
    const double empirical = f.cycles ? static_cast<double>(ones) / static_cast<double>(f.cycles) : 0.0;
    const double err = std::fabs(empirical - analytic);
    rows << hw::to_string(cfg.select_source) << ',' << n << ',' << m << ',' << num(q.value()) << ','
         << num(analytic) << ',' << num(empirical) << ',' << f.cycles << ',' << num(err) << '\n';
    if (f.cycles == 0) continue;
    double bias = 0.0;
    if (!ideal) {
      double pq = 0.0;
      for (unsigned i = 1; i <= n; ++i)
        if (hw::mux_out(q.bits(), n, i)) pq += quantized[i - 1];
      bias = std::fabs(pq - analytic);
    }
    const double tol = bias + std::max(std::ldexp(1.0, -static_cast<int>(m)),
                                       4.0 * std::sqrt(analytic * (1.0 - analytic) / static_cast<double>(f.cycles)));
    check("empirical P at " + num(q.value()), err <= tol, num(err) + " <= " + num(tol));
  }

  std::ostringstream csv;
  csv << comment_header("hw-verify", f.seed, config) << checks.str()
      << "mode,N,M,weight_value,analytic_p,empirical_p,n_cycles,abs_error\n"
      << rows.str();
  write_text(f.out, csv.str());
  if (!ok) std::cerr << "hw-verify: one or more checks failed\n";
  return ok ? 0 : 2;
}

}  // namespace

int main(int argc, char** argv) {
  for (int i = 0; i < argc; ++i) g_command_line += (i ? " " : "") + std::string(argv[i]);

  CLI::App app{"bitstorm: stochastic-projection ensembles of ternary networks"};
  app.set_version_flag("--version", version);
  app.require_subcommand(1);

  GenDataFlags gen;
  auto* gen_cmd = app.add_subcommand("gen-data", "generate a synthetic dataset as train/val/test containers");
  gen_cmd->add_option("--kind", gen.kind, "two-moons, gaussian-blobs or rings")->capture_default_str();
  gen_cmd->add_option("--n", gen.n, "total examples (>= 10)")->capture_default_str();
  gen_cmd->add_option("--noise", gen.noise, "noise scale")->capture_default_str();
  gen_cmd->add_option("--classes", gen.classes, "classes for gaussian-blobs")->capture_default_str();
  gen_cmd->add_option("--seed", gen.seed)->capture_default_str();
  gen_cmd->add_option("--out", gen.out, "output prefix; writes PREFIX.{train,val,test}.bstd")->capture_default_str();

  TrainFlags tr;
  auto* train_cmd = app.add_subcommand("train", "train with stochastic weight projection and keep the best epoch");
  train_cmd->add_option("--train", tr.train, "training container")->required();
  train_cmd->add_option("--val", tr.val, "validation container")->required();
  train_cmd->add_option("--topology", tr.topology, "e.g. 32FC-16FC-2SVM or 128C3-MP2-10SVM")->capture_default_str();
  train_cmd->add_option("--activation", tr.activation, "sign or relu")->capture_default_str();
  train_cmd->add_flag("--affine-norm", tr.affine_norm, "insert a per-channel affine layer after each weight layer");
  train_cmd->add_option("--epochs", tr.epochs)->capture_default_str();
  train_cmd->add_option("--lr", tr.learning_rate, "initial learning rate")->capture_default_str();
  train_cmd->add_option("--lr-decay", tr.lr_decay, "per-epoch decay factor")->capture_default_str();
  train_cmd->add_option("--batch-size", tr.batch_size)->capture_default_str();
  train_cmd->add_option("--projection", tr.projection, "ternary, binary or identity")->capture_default_str();
  train_cmd->add_option("--ste-window", tr.ste_window)->capture_default_str();
  train_cmd->add_option("--seed", tr.seed)->capture_default_str();
  train_cmd->add_option("--out", tr.out, "model file")->capture_default_str();
  train_cmd->add_option("--log", tr.log, "epoch log CSV");

  EvalFlags ev;
  auto* eval_cmd = app.add_subcommand("eval", "error rate of a model on a dataset");
  eval_cmd->add_option("--model", ev.model)->required();
  eval_cmd->add_option("--data", ev.data)->required();
  eval_cmd->add_option("--mode", ev.mode, "float, single-projection or ensemble")
      ->check(CLI::IsMember({"float", "single-projection", "ensemble"}))
      ->capture_default_str();
  eval_cmd->add_option("--k", ev.k, "ensemble size for --mode ensemble")->capture_default_str();
  eval_cmd->add_option("--seed", ev.seed)->capture_default_str();
  eval_cmd->add_option("--out", ev.out, "CSV output (default stdout)");
  ev.sampler.add(eval_cmd);

  SweepFlags sw;
  auto* sweep_cmd = app.add_subcommand("ensemble-sweep", "error vs ensemble size, repeated over trials");
  sweep_cmd->add_option("--model", sw.model)->required();
  sweep_cmd->add_option("--data", sw.data)->required();
  sweep_cmd->add_option("--sizes", sw.sizes, "increasing ensemble sizes")->delimiter(',')->capture_default_str();
  sweep_cmd->add_option("--trials", sw.trials)->capture_default_str();
  sweep_cmd->add_option("--aggregation", sw.aggregation, "score-sum or majority-vote")->capture_default_str();
  sweep_cmd->add_option("--sampling", sw.sampling, "nested or independent")->capture_default_str();
  sweep_cmd->add_option("--seed", sw.seed)->capture_default_str();
  sweep_cmd->add_option("--out", sw.out, "CSV output (default stdout)");
  sw.sampler.add(sweep_cmd);

  HwVerifyFlags hv;
  auto* hw_cmd = app.add_subcommand("hw-verify", "check the multiplexer rounder analytically and in simulation");
  hw_cmd->add_option("--n-inputs", hv.n_inputs)->capture_default_str();
  hw_cmd->add_option("--modulator-width", hv.modulator_width)->capture_default_str();
  hw_cmd->add_option("--select-source", hv.select_source)->capture_default_str();
  hw_cmd->add_option("--cycles", hv.cycles)->capture_default_str();
  hw_cmd->add_option("--seed", hv.seed)->capture_default_str();
  hw_cmd->add_option("--out", hv.out, "CSV output (default stdout)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen_cmd) return cmd_gen_data(gen);
    if (*train_cmd) return cmd_train(tr);
    if (*eval_cmd) return cmd_eval(ev);
    if (*sweep_cmd) return cmd_ensemble_sweep(sw);
    if (*hw_cmd) return cmd_hw_verify(hv);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}
