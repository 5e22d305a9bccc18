// Copyright 2026 The voxelser Authors
// SPDX-License-Identifier: Apache-2.0

#include "cli.hpp"

#include <CLI11.hpp>

#include <fstream>
#include <functional>
#include <iomanip>
#include <memory>

#include "voxelser/ablation.hpp"
#include "voxelser/bench.hpp"
#include "voxelser/checkpoint.hpp"
#include "voxelser/crpe.hpp"
#include "voxelser/grid_io.hpp"
#include "voxelser/suites.hpp"
#include "voxelser/synth.hpp"
#include "voxelser/train.hpp"

namespace voxelser::cli {
namespace {

constexpr int kPrecision = 10;

struct Options {
  // dump
  std::string file;
  std::string curve = "hilbert";
  std::size_t shift = 0;
  std::size_t group = 16;
  bool summary = false;
  // bench
  std::string attention;
  std::size_t n = 0;
  std::size_t g = 64;
  std::size_t head_dim = 8;
  // shared
  std::uint64_t seed = 0;
  bool seed_set = false;
  std::string module = "all";
  std::string spec;
  std::string preset;
  std::string out;
  std::string center = "centroid";
  std::string angles = "relative";
  std::string scene;
  long steps = 500;
  std::string config;
  std::string trace;
  std::string weights = "weights.vswt";
  std::vector<std::string> only;
};

class OutputFile {
 public:
  OutputFile(const std::string& path, std::ostream& fallback) : stream_(&fallback) {
    if (path.empty() || path == "-") return;
    file_ = std::make_unique<std::ofstream>(path, std::ios::binary);
    if (!*file_) throw Error(ErrorCode::FileError, "cannot write " + path);
    stream_ = file_.get();
  }
  std::ostream& get() { return *stream_; }

 private:
  std::unique_ptr<std::ofstream> file_;
  std::ostream* stream_;
};

TrainConfig train_config(const Options& o) {
  return o.config.empty() ? TrainConfig{} : load_train_config(o.config);
}

int cmd_dump(const Options& o, std::ostream& out) {
  const VoxelGrid grid = load_vser(o.file);
  const CurveKind kind = parse_curve(o.curve);
  const auto seq = serialize(grid, kind, o.shift);
  const auto part = partition(seq, o.group);
  const int bits = grid.dims().curve_bits();
  if (o.summary) {
    out << "group,begin,end,size\n";
    for (std::size_t i = 0; i < part.groups.size(); ++i) {
      const auto& g = part.groups[i];
      out << i << ',' << g.begin << ',' << g.end << ',' << g.size() << '\n';
    }
    return kOk;
  }
  out << "pos,voxel,x,y,z,key,group\n";
  for (std::size_t i = 0; i < seq.order.size(); ++i) {
    const auto v = seq.order[i];
    const auto c = grid.dims().coord(v);
    out << i << ',' << v << ',' << c.x << ',' << c.y << ',' << c.z << ',' << encode(kind, bits, c)
        << ',' << i / o.group << '\n';
  }
  return kOk;
}

int cmd_bench(const Options& o, std::ostream& out) {
  const auto row = bench_attention(parse_attention_kind(o.attention), o.n, o.g, o.seed, o.head_dim);
  write_bench_header(out);
  write_bench_row(out, row);
  return kOk;
}

int cmd_gradcheck(const Options& o, std::ostream& out) {
  const auto cases = run_gradcheck_suite(o.module, o.seed_set ? o.seed : 7);
  bool ok = true;
  out << "module,case,elements,max_rel_error,result\n";
  for (const auto& c : cases) {
    ok = ok && c.report.passed;
    out << c.module << ',' << c.name << ',' << c.report.elements << ',' << std::scientific
        << std::setprecision(3) << c.report.max_rel_error << std::defaultfloat
        << std::setprecision(kPrecision) << ',' << (c.report.passed ? "pass" : "fail") << '\n';
  }
  out << (ok ? "pass" : "fail") << '\n';
  return ok ? kOk : kInvalid;
}

SceneSpec scene_spec(const Options& o) {
  require(o.spec.empty() != o.preset.empty(), ErrorCode::BadConfig,
          "give exactly one of --spec or --preset");
  SceneSpec s;
  if (!o.spec.empty()) {
    s = parse_scene_spec(load_kv(o.spec));
  } else if (o.preset == "toy") {
    s = toy_scene();
  } else if (o.preset == "l_room") {
    s = l_room_scene();
  } else {
    throw Error(ErrorCode::BadConfig, "unknown preset '" + o.preset + "' (toy, l_room)");
  }
  if (o.seed_set) s.seed = o.seed;
  return s;
}

int cmd_synth(const Options& o, std::ostream& out) {
  const VoxelGrid grid = generate(scene_spec(o));
  save_vser(o.out, grid);
  out << "dims=" << grid.dims().d << 'x' << grid.dims().h << 'x' << grid.dims().w << '\n'
      << "classes=" << grid.num_classes() << '\n'
      << "occupied=" << grid.occupied_count() << '\n';
  for (std::uint16_t c = 1; c <= grid.num_classes(); ++c) {
    out << "class_" << c << '='
        << std::count(grid.labels().begin(), grid.labels().end(), static_cast<std::uint8_t>(c)) << '\n';
  }
  return kOk;
}

int cmd_crpe(const Options& o, std::ostream& out) {
  const VoxelGrid grid = load_vser(o.file);
  const CenterMode center = o.center == "centroid" ? CenterMode::Centroid
                            : o.center == "grid"   ? CenterMode::GridCenter
                                                   : throw Error(ErrorCode::BadConfig, "--center must be centroid or grid");
  const AngleMode angles = o.angles == "relative" ? AngleMode::Relative
                           : o.angles == "absolute" ? AngleMode::Absolute
                                                    : throw Error(ErrorCode::BadConfig, "--angles must be relative or absolute");
  const auto deltas = angular_deltas(grid, reference_center(grid, center), angles);
  const auto occ = grid.occupied();
  out << "x,y,z,dyaw,dpitch\n";
  for (std::size_t i = 0; i < occ.size(); ++i) {
    const auto c = grid.dims().coord(occ[i]);
    out << c.x << ',' << c.y << ',' << c.z << ',' << deltas[i].yaw << ',' << deltas[i].pitch << '\n';
  }
  return kOk;
}

int cmd_train(const Options& o, std::ostream& out, std::ostream& err) {
  const VoxelGrid scene = load_vser(o.scene);
  const TrainResult r = train_toy(scene, train_config(o), o.steps, o.seed);
  {
    OutputFile trace(o.trace, out);
    trace.get() << std::setprecision(kPrecision);
    write_trace_header(trace.get());
    for (const auto& row : r.trace) write_trace_row(trace.get(), row);
  }
  save_checkpoint(o.weights, r.config, r.model);
  const auto m = evaluate(r.model, scene);
  err << "steps=" << r.trace.size() << " accuracy=" << m.accuracy << " sc_iou=" << m.sc_iou
      << " miou=" << m.miou << " weights=" << o.weights << '\n';
  if (!r.trace.empty() && !std::isfinite(r.trace.back().loss.l_total)) {
    err << "error: loss became non-finite at step " << r.trace.back().step << '\n';
    return kInvalid;
  }
  return kOk;
}

int cmd_eval(const Options& o, std::ostream& out) {
  const VoxelGrid scene = load_vser(o.scene);
  const Checkpoint ck = load_checkpoint(o.weights);
  require(ck.config.model.input_channels == scene.feature_dim() &&
              ck.config.model.num_classes == scene.num_classes(),
          ErrorCode::ShapeMismatch, "checkpoint was trained on a scene with a different layout");
  const auto m = evaluate(ck.model, scene);
  out << "sc_iou=" << m.sc_iou << '\n' << "miou=" << m.miou << '\n' << "accuracy=" << m.accuracy << '\n';
  for (std::size_t c = 0; c < m.class_iou.size(); ++c) {
    out << "iou_" << c + 1 << '=';
    if (m.class_iou[c]) {
      out << *m.class_iou[c];
    } else {
      out << "nan";
    }
    out << '\n';
  }
  return kOk;
}

int cmd_ablate(const Options& o, std::ostream& out, std::ostream& err) {
  const VoxelGrid scene = o.scene.empty() ? generate(toy_scene()) : load_vser(o.scene);
  const TrainConfig base = train_config(o);
  auto variants = ablation_variants();
  if (!o.only.empty()) {
    std::vector<AblationVariant> keep;
    for (const auto& name : o.only) {
      const auto it = std::find_if(variants.begin(), variants.end(),
                                   [&](const AblationVariant& v) { return v.name == name; });
      require(it != variants.end(), ErrorCode::BadConfig, "unknown ablation '" + name + "'");
      keep.push_back(*it);
    }
    variants = std::move(keep);
  }
  OutputFile csv(o.out, out);
  csv.get() << std::setprecision(kPrecision);
  write_ablation_header(csv.get());
  for (const auto& v : variants) {
    err << "running " << v.name << '\n';
    write_ablation_row(csv.get(), run_ablation(v, scene, base, o.steps, o.seed));
  }
  return kOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Space-filling-curve voxel serialization and adaptive serialized attention toolkit",
               "voxelser"};
  app.set_version_flag("--version", std::string("voxelser ") + VOXELSER_VERSION);
  app.require_subcommand(1);
  Options o;
  std::function<int()> action;

  auto* dump = app.add_subcommand("dump", "Print the serialized order and group of every occupied voxel");
  dump->add_option("file", o.file, "VSER grid file")->required();
  dump->add_option("--curve", o.curve, "zorder or hilbert")->capture_default_str();
  dump->add_option("--shift", o.shift, "Cyclic shift of the serialized sequence")->capture_default_str();
  dump->add_option("--group", o.group, "Group size G")->capture_default_str();
  dump->add_flag("--summary", o.summary, "Print one row per group instead of per voxel");
  dump->callback([&] { action = [&] { return cmd_dump(o, out); }; });

  auto* bench = app.add_subcommand("bench", "Time one attention pass and count token pairs (CSV)");
  bench->add_option("--attention", o.attention, "grouped or full")->required();
  bench->add_option("--n", o.n, "Number of tokens")->required();
  bench->add_option("--g", o.g, "Group size for grouped attention")->capture_default_str();
  bench->add_option("--head-dim", o.head_dim, "Channels per token")->capture_default_str();
  bench->add_option("--seed", o.seed, "Seed for the random tokens")->capture_default_str();
  bench->callback([&] { action = [&] { return cmd_bench(o, out); }; });

  auto* grad = app.add_subcommand("gradcheck", "Run finite-difference gradient suites");
  grad->add_option("--module", o.module, "numcore, asa, crpe, block, losses or all")->capture_default_str();
  grad->add_option("--seed", o.seed, "Seed for the suite inputs (default 7)");
  grad->callback([&] {
    o.seed_set = grad->count("--seed") > 0;
    action = [&] { return cmd_gradcheck(o, out); };
  });

  auto* synth = app.add_subcommand("synth", "Generate a synthetic scene as a VSER file");
  synth->add_option("--spec", o.spec, "Scene description (key = value file)");
  synth->add_option("--preset", o.preset, "Built-in scene: toy or l_room");
  synth->add_option("--seed", o.seed, "Override the scene seed");
  synth->add_option("--out", o.out, "Output VSER file")->required();
  synth->callback([&] {
    o.seed_set = synth->count("--seed") > 0;
    action = [&] { return cmd_synth(o, out); };
  });

  auto* crpe = app.add_subcommand("crpe", "Dump per-voxel angular deltas (CSV)");
  crpe->add_option("--dump", o.file, "VSER grid file")->required();
  crpe->add_option("--center", o.center, "centroid or grid")->capture_default_str();
  crpe->add_option("--angles", o.angles, "relative or absolute")->capture_default_str();
  crpe->callback([&] { action = [&] { return cmd_crpe(o, out); }; });

  auto* train = app.add_subcommand("train-toy", "Overfit the model to one scene with SGD");
  train->add_option("--scene", o.scene, "VSER scene file")->required();
  train->add_option("--steps", o.steps, "SGD steps")->capture_default_str();
  train->add_option("--seed", o.seed, "Seed for initialization and Gumbel noise")->capture_default_str();
  train->add_option("--config", o.config, "Training config (key = value file)");
  train->add_option("--trace", o.trace, "Metric trace CSV path (default standard output)");
  train->add_option("--weights", o.weights, "Checkpoint output path")->capture_default_str();
  train->callback([&] { action = [&] { return cmd_train(o, out, err); }; });

  auto* ev = app.add_subcommand("eval", "Score a checkpoint on a scene");
  ev->add_option("--scene", o.scene, "VSER scene file")->required();
  ev->add_option("--weights", o.weights, "Checkpoint file")->required();
  ev->callback([&] { action = [&] { return cmd_eval(o, out); }; });

  auto* ablate = app.add_subcommand("ablate", "Train every ablation variant and emit a comparison CSV");
  ablate->add_option("--scene", o.scene, "VSER scene file (default: built-in toy scene)");
  ablate->add_option("--steps", o.steps, "SGD steps per variant")->capture_default_str();
  ablate->add_option("--seed", o.seed, "Seed shared by all variants")->capture_default_str();
  ablate->add_option("--config", o.config, "Base training config");
  ablate->add_option("--only", o.only, "Run only these variants");
  ablate->add_option("--out", o.out, "CSV path (default standard output)");
  ablate->callback([&] { action = [&] { return cmd_ablate(o, out, err); }; });

  std::vector<std::string> rev(args.rbegin(), args.rend() - 1);
  try {
    app.parse(rev);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == static_cast<int>(CLI::ExitCodes::Success) ? kOk : kInvalid;
  }

  out << std::setprecision(kPrecision);
  try {
    return action();
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return e.code() == ErrorCode::FileError ? kIoError : kInvalid;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kInvalid;
  }
}

}  // namespace voxelser::cli
