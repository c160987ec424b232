#include "commands.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <optional>
#include <ostream>

#include "s4t/adapt.hpp"
#include "s4t/error.hpp"
#include "s4t/io.hpp"
#include "s4t/metrics.hpp"
#include "s4t/segmodel.hpp"

namespace s4t::cli {

namespace fs = std::filesystem;

SceneSpec scene_spec() { return SceneSpec{}; }

namespace {

std::vector<ManifestEntry> open_manifest(const std::string& path, bool sorted) {
  if (!fs::is_regular_file(path)) throw ConfigError("manifest not found: " + path);
  std::vector<ManifestEntry> entries = read_manifest(path);
  if (entries.empty()) throw Error("manifest " + path + " lists no images");
  if (sorted) {
    std::stable_sort(entries.begin(), entries.end(),
                     [](const ManifestEntry& a, const ManifestEntry& b) { return a.image < b.image; });
  }
  return entries;
}

const std::string& manifest_for(const Config& cfg, Split split) {
  switch (split) {
    case Split::source:
      return cfg.source_manifest;
    case Split::target:
      return cfg.target_manifest;
    case Split::eval:
      break;
  }
  return cfg.eval_manifest.empty() ? cfg.target_manifest : cfg.eval_manifest;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  f << text;
  if (!f) throw Error("cannot write " + path.string());
}

SegNet load_checkpoint(const Config& cfg) {
  if (cfg.checkpoint.empty()) throw ConfigError("no checkpoint given (set checkpoint=PATH)");
  if (!fs::is_regular_file(cfg.checkpoint)) throw ConfigError("checkpoint not found: " + cfg.checkpoint);
  return SegNet::load(cfg.checkpoint);
}

std::string class_name(std::size_t c, const SceneSpec& spec) {
  return (spec.is_thing(c) ? "thing" : "stuff") + std::to_string(c);
}

std::string opt(const std::optional<double>& v) { return v ? format_double(*v) : ""; }

std::string pct(const std::optional<double>& v) {
  if (!v) return "    -";
  char buf[16];
  std::snprintf(buf, sizeof buf, "%6.2f", 100.0 * *v);
  return buf;
}

IoUReport evaluate_model(const SegNet& model, const SplitData& data, const Config& cfg) {
  const std::size_t H = data.images.front().dim(1), W = data.images.front().dim(2);
  const auto scales = parse_scales(cfg.eval_scales, H, W);
  const ConfusionMatrix conf = evaluate(model, data.images, data.labels, cfg.eval_batch_size, scales);
  return iou(conf, scene_spec().num_stuff);
}

void print_report(std::ostream& out, const IoUReport& rep) {
  const SceneSpec spec = scene_spec();
  for (std::size_t c = 0; c < rep.per_class.size(); ++c) {
    out << "  " << class_name(c, spec) << "  IoU " << pct(rep.per_class[c]) << "\n";
  }
  out << "  mIoU " << pct(rep.miou) << "  thing " << pct(rep.thing_miou) << "  stuff " << pct(rep.stuff_miou)
      << "  pixel acc " << pct(rep.pixel_accuracy) << "\n";
}

std::string report_csv(const IoUReport& rep) {
  const SceneSpec spec = scene_spec();
  std::string csv = "metric,value\n";
  for (std::size_t c = 0; c < rep.per_class.size(); ++c) csv += "iou_" + class_name(c, spec) + "," + opt(rep.per_class[c]) + "\n";
  csv += "miou," + format_double(rep.miou) + "\n";
  csv += "thing_miou," + format_double(rep.thing_miou) + "\n";
  csv += "stuff_miou," + format_double(rep.stuff_miou) + "\n";
  csv += "pixel_accuracy," + format_double(rep.pixel_accuracy) + "\n";
  return csv;
}

// ---- commands -------------------------------------------------------------

int cmd_generate(const Config& cfg, const fs::path& out_dir, std::ostream& out) {
  const SceneSpec spec = scene_spec();
  const Benchmark bench = make_benchmark(spec, cfg.num_source, cfg.num_target, cfg.data_seed);
  const fs::path src = write_dataset(out_dir / "source", bench.source, spec.num_classes);
  const fs::path tgt = write_dataset(out_dir / "target", bench.target, spec.num_classes);
  out << "wrote " << bench.source.size() << " source images to " << src.string() << "\n"
      << "wrote " << bench.target.size() << " target images to " << tgt.string() << "\n";
  return 0;
}

int cmd_train_source(const Config& cfg, const fs::path& out_dir, std::ostream& out) {
  const SplitData data = load_split(cfg, Split::source, true, false);
  SegNetConfig net;
  net.num_classes = scene_spec().num_classes;
  SegNet model(net, cfg.seed);
  const SourceTrainingOptions opts{cfg.source_epochs, cfg.source_lr, 0.0, cfg.source_batch_size, cfg.seed, cfg.flip};

  std::string log = "epoch,step,loss\n";
  const SourceTrainingReport rep = train_source(model, data.images, data.labels, opts, [&](int epoch, std::size_t step, double loss) {
    log += std::to_string(epoch) + "," + std::to_string(step) + "," + format_double(loss) + "\n";
  });
  std::string summary = "epoch,mean_loss\n";
  for (std::size_t e = 0; e < rep.epoch_loss.size(); ++e) {
    summary += std::to_string(e) + "," + format_double(rep.epoch_loss[e]) + "\n";
    out << "epoch " << e << "  mean loss " << format_double(rep.epoch_loss[e]) << "\n";
  }
  summary += "pixel_accuracy," + format_double(rep.pixel_accuracy) + "\n";

  const fs::path ckpt = out_dir / "source_model.s4tt";
  model.save(ckpt);
  write_text(out_dir / "train_log.csv", log);
  write_text(out_dir / "train_summary.csv", summary);
  out << "source pixel accuracy " << pct(rep.pixel_accuracy) << "\ncheckpoint " << ckpt.string() << "\n";
  return 0;
}

int cmd_adapt(const Config& cfg, const fs::path& out_dir, std::ostream& out) {
  const SegNet source = load_checkpoint(cfg);
  // Labels are only touched in oracle and analysis modes.
  const bool need_labels = cfg.oracle != OracleMode::off || cfg.analysis;
  const SplitData data = load_split(cfg, Split::target, need_labels, false);

  std::string log = step_log_header() + "\n";
  const AdaptResult res = adapt(source, data.images, cfg, data.labels, [&](const StepLog& s) {
    log += step_log_row(s) + "\n";
  });
  const fs::path ckpt = out_dir / "adapted_model.s4tt";
  res.model.save(ckpt);
  write_text(out_dir / "adapt_log.csv", log);
  const LossBreakdown& last = res.steps.back().loss;
  out << res.steps.size() << " adaptation steps, last loss " << format_double(last.total) << "\ncheckpoint "
      << ckpt.string() << "\n";
  return 0;
}

int cmd_eval(const Config& cfg, const fs::path& out_dir, std::ostream& out) {
  const SegNet model = load_checkpoint(cfg);
  const SplitData data = load_split(cfg, Split::eval, true, true);
  const IoUReport rep = evaluate_model(model, data, cfg);
  write_text(out_dir / "eval.csv", report_csv(rep));
  out << "evaluated " << data.images.size() << " images (scales " << cfg.eval_scales << ")\n";
  print_report(out, rep);
  return 0;
}

// Second view rendered after interpolation: reliable pixels keep their
// prediction, unreliable ones take the interpolated label when one exists.
LabelMap refined_labels(const LabelMap& view2, const InterpolationResult* interp) {
  LabelMap out = view2;
  if (!interp) return out;
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (interp->y_int.labels[i] != kNoLabel) out.labels[i] = interp->y_int.labels[i];
  }
  return out;
}

void render_examples(const SegNet& model, const SplitData& data, const Config& cfg, const fs::path& dir,
                     std::size_t count) {
  fs::create_directories(dir);
  count = std::min({count, data.images.size(), cfg.batch_size});
  std::vector<std::size_t> idx(count);
  for (std::size_t i = 0; i < count; ++i) idx[i] = i;
  NoGradGuard no_grad;
  ClassStats stats(model.num_classes(), cfg.Q, cfg.eta);
  const PseudolabelBatch b = build_pseudolabels(model, stack_batch(std::span(data.images).first(count)), idx, cfg, 0,
                                                stats, std::span(data.labels).first(count));
  const std::vector<Color> palette = scene_spec().palette;
  const std::size_t H = data.images[0].dim(1), W = data.images[0].dim(2);
  for (std::size_t n = 0; n < count; ++n) {
    char stem[32];
    std::snprintf(stem, sizeof stem, "%03zu_", n);
    const std::string s = stem;
    write_ppm(dir / (s + "image.ppm"), data.images[n]);
    write_ppm(dir / (s + "view2_input.ppm"), slice_batch(b.views.crops, n, 1).reshaped({3, H, W}));
    write_label_ppm(dir / (s + "gt.ppm"), b.gt_view2[n], palette);
    write_label_ppm(dir / (s + "view1.ppm"), b.views.view1[n], palette);
    write_label_ppm(dir / (s + "view2.ppm"), b.views.view2[n], palette);
    write_mask_pgm(dir / (s + "reliable.pgm"), b.reliability[n].r);
    write_label_ppm(dir / (s + "interpolated.ppm"),
                    refined_labels(b.views.view2[n], b.interp.empty() ? nullptr : &b.interp[n]), palette);
  }
}

int cmd_analyze(const Config& cfg, const fs::path& out_dir, std::ostream& out) {
  const SegNet model = load_checkpoint(cfg);
  const SplitData data = load_split(cfg, Split::target, true, false);
  const PseudolabelAnalysis a = analyze_pseudolabels(model, data.images, data.labels, cfg, scene_spec().num_stuff);
  const PseudolabelReport& r = a.report;

  std::string csv = "metric,value\n";
  auto row = [&](const std::string& k, const std::string& v) { csv += k + "," + v + "\n"; };
  row("pixels", std::to_string(r.total));
  row("masked", std::to_string(r.masked));
  row("fraction_reliable", format_double(r.fraction_reliable()));
  row("fraction_rel_nbhd", format_double(r.fraction_rel_nbhd()));
  row("fraction_unrel_nbhd", format_double(r.fraction_unrel_nbhd()));
  row("acc_reliable", opt(r.reliable_accuracy()));
  row("acc_unreliable", opt(r.unreliable_accuracy()));
  row("acc_rel_nbhd_before", opt(r.rel_nbhd_before()));
  row("acc_rel_nbhd_after", opt(r.rel_nbhd_after()));
  row("acc_unrel_nbhd", opt(r.unrel_nbhd_accuracy()));
  row("view2_miou", format_double(a.iou.miou));
  row("precision_iou_pearson", opt(a.precision_iou_correlation));
  write_text(out_dir / "analysis.csv", csv);

  const SceneSpec spec = scene_spec();
  std::string per_class = "class,reliable_pixels,reliable_precision,unreliable_pixels,unreliable_precision,view2_iou\n";
  for (std::size_t c = 0; c < spec.num_classes; ++c) {
    per_class += class_name(c, spec) + "," + std::to_string(a.precision.reliable_count[c]) + "," +
                 opt(a.precision.reliable_precision[c]) + "," + std::to_string(a.precision.unreliable_count[c]) + "," +
                 opt(a.precision.unreliable_precision[c]) + "," + opt(a.iou.per_class[c]) + "\n";
  }
  write_text(out_dir / "analysis_per_class.csv", per_class);
  render_examples(model, data, cfg, out_dir / "render", 4);

  out << "pseudolabel accuracy (%):\n"
      << "  reliable              " << pct(r.reliable_accuracy()) << "  (" << pct(r.fraction_reliable()) << " of pixels)\n"
      << "  unreliable            " << pct(r.unreliable_accuracy()) << "\n"
      << "  rel. nbhd before      " << pct(r.rel_nbhd_before()) << "  (" << pct(r.fraction_rel_nbhd()) << " of pixels)\n"
      << "  rel. nbhd after       " << pct(r.rel_nbhd_after()) << "\n"
      << "  unrel. nbhd           " << pct(r.unrel_nbhd_accuracy()) << "  (" << pct(r.fraction_unrel_nbhd())
      << " of pixels)\n"
      << "precision/IoU correlation " << opt(a.precision_iou_correlation) << "\n";
  return 0;
}

int cmd_ablate(const Config& cfg, const std::string& suite, const fs::path& out_dir, std::ostream& out,
               std::ostream& err) {
  const std::vector<AblationRow> rows = ablation_suite(suite);
  const SegNet source = load_checkpoint(cfg);
  const SplitData eval_data = load_split(cfg, Split::eval, true, true);

  std::vector<Config> configs;
  bool any_labels = false;
  for (const AblationRow& r : rows) {
    Config c = cfg;
    for (const std::string& o : r.overrides) c.set_assignment(o);
    any_labels = any_labels || c.oracle != OracleMode::off || c.analysis;
    configs.push_back(std::move(c));
  }
  const SplitData target = load_split(cfg, Split::target, any_labels, false);

  std::string csv = "suite,row,name,overrides,status,miou,thing_miou,stuff_miou,pixel_accuracy,error\n";
  auto emit = [&](std::size_t i, const std::string& name, const std::string& overrides, const IoUReport* rep,
                  const std::string& error) {
    csv += suite + "," + std::to_string(i) + "," + name + ",\"" + overrides + "\"," + (rep ? "ok" : "failed") + ",";
    if (rep) {
      csv += format_double(rep->miou) + "," + format_double(rep->thing_miou) + "," + format_double(rep->stuff_miou) + "," +
             format_double(rep->pixel_accuracy) + ",";
    } else {
      csv += ",,,,\"" + error + "\"";
    }
    csv += "\n";
    char line[160];
    if (rep) {
      std::snprintf(line, sizeof line, "%3zu  %-28s mIoU %6.2f  thing %6.2f  stuff %6.2f\n", i, name.c_str(),
                    100 * rep->miou, 100 * rep->thing_miou, 100 * rep->stuff_miou);
    } else {
      std::snprintf(line, sizeof line, "%3zu  %-28s FAILED\n", i, name.c_str());
    }
    out << line;
  };

  const IoUReport base = evaluate_model(source, eval_data, cfg);
  emit(0, "source", "", &base, "");
  bool failed = false;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    std::string overrides;
    for (const std::string& o : rows[i].overrides) overrides += (overrides.empty() ? "" : ";") + o;
    try {
      const Config& c = configs[i];
      const bool need = c.oracle != OracleMode::off || c.analysis;
      const AdaptResult res = adapt(source, target.images, c, need ? std::span<const LabelMap>(target.labels)
                                                                   : std::span<const LabelMap>());
      const IoUReport rep = evaluate_model(res.model, eval_data, c);
      emit(i + 1, rows[i].name, overrides, &rep, "");
    } catch (const std::exception& e) {
      failed = true;
      std::string msg = e.what();
      std::replace(msg.begin(), msg.end(), '"', '\'');
      err << "row " << rows[i].name << " failed: " << msg << "\n";
      emit(i + 1, rows[i].name, overrides, nullptr, msg);
    }
  }
  write_text(out_dir / ("ablate_" + suite + ".csv"), csv);
  return failed ? 1 : 0;
}

}  // namespace

std::vector<std::string> ablation_suites() { return {"table4", "noisy_oracle", "k_sweep", "selection_modes", "all_params"}; }

std::vector<AblationRow> ablation_suite(const std::string& suite) {
  if (suite == "table4") {
    const std::vector<std::string> sel = {"loss=s4t", "ie_reg=true"};
    auto with = [&](std::vector<std::string> extra) {
      std::vector<std::string> v = sel;
      v.insert(v.end(), extra.begin(), extra.end());
      return v;
    };
    return {
        {"entmin", {"loss=entmin", "ie_reg=false"}},
        {"ce_all", {"loss=ce_all", "ie_reg=false"}},
        {"ce_all+ie", {"loss=ce_all", "ie_reg=true"}},
        {"confidence", with({"confidence=true", "consistency=false", "loss_weights=false", "interpolation=false"})},
        {"consistency", with({"confidence=false", "consistency=true", "loss_weights=false", "interpolation=false"})},
        {"conf+cons", with({"confidence=true", "consistency=true", "loss_weights=false", "interpolation=false"})},
        {"conf+cons+weights", with({"confidence=true", "consistency=true", "loss_weights=true", "interpolation=false"})},
        {"s4t", with({"confidence=true", "consistency=true", "loss_weights=true", "interpolation=true"})},
    };
  }
  if (suite == "noisy_oracle") {
    std::vector<AblationRow> rows;
    for (int p : {0, 20, 40, 60, 80}) rows.push_back({"oracle_p" + std::to_string(p), {"oracle=noisy", "oracle_p=" + std::to_string(p)}});
    return rows;
  }
  if (suite == "k_sweep") {
    std::vector<AblationRow> rows;
    for (int k : {3, 5, 7, 9}) rows.push_back({"k" + std::to_string(k), {"k=" + std::to_string(k)}});
    return rows;
  }
  if (suite == "selection_modes") {
    return {{"or", {"selection_mode=or"}},
            {"and_vs_rest", {"selection_mode=and_vs_rest"}},
            {"and_vs_and", {"selection_mode=and_vs_and"}}};
  }
  if (suite == "all_params") {
    return {{"bn_only", {"scope=bn_only"}},
            {"all_params_lr1e-5", {"scope=all_params", "lr=1e-5"}},
            {"all_params_lr1e-3", {"scope=all_params", "lr=1e-3"}}};
  }
  throw ConfigError("unknown ablation suite '" + suite + "'");
}

SplitData load_split(const Config& cfg, Split split, bool with_labels, bool sorted) {
  const SceneSpec spec = scene_spec();
  const std::string& manifest = manifest_for(cfg, split);
  SplitData out;
  if (manifest.empty()) {
    Dataset d = split == Split::source ? source_dataset(spec, cfg.num_source, cfg.data_seed)
                                       : target_dataset(spec, cfg.num_target, cfg.data_seed);
    out.images = std::move(d.images);
    if (with_labels) out.labels = std::move(d.labels);
    return out;
  }
  for (const ManifestEntry& e : open_manifest(manifest, sorted)) {
    out.images.push_back(read_ppm(e.image));
    if (with_labels) {
      if (!e.label) throw Error("manifest " + manifest + ": no label for " + e.image.string());
      out.labels.push_back(read_label_pgm(*e.label, spec.num_classes));
    }
  }
  return out;
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Source-free domain adaptation for semantic segmentation", "s4t"};
  app.require_subcommand(1);
  std::string config_path, out_dir = "s4t_out", suite;
  std::optional<std::uint64_t> seed;
  std::vector<std::string> sets;
  app.add_option("--config", config_path, "key = value configuration file");
  app.add_option("--seed", seed, "overrides the config seed");
  app.add_option("--out", out_dir, "output directory")->capture_default_str();
  app.add_option("--set", sets, "key=value override (repeatable)");

  auto* generate = app.add_subcommand("generate", "write the synthetic benchmark as PPM/PGM files");
  auto* train = app.add_subcommand("train-source", "supervised training on the source split");
  auto* adapt_cmd = app.add_subcommand("adapt", "one-pass source-free adaptation on the target split");
  auto* eval = app.add_subcommand("eval", "IoU report on the evaluation split");
  auto* analyze = app.add_subcommand("analyze", "pseudolabel and reliability analysis of a checkpoint");
  auto* ablate = app.add_subcommand("ablate", "run an ablation suite");
  ablate->add_option("suite", suite, "table4|noisy_oracle|k_sweep|selection_modes|all_params")->required();
  for (CLI::App* sub : app.get_subcommands({})) sub->fallthrough();

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 2;
  }

  try {
    Config cfg;
    if (!config_path.empty()) cfg.load(config_path);
    for (const std::string& s : sets) cfg.set_assignment(s);
    if (seed) cfg.seed = *seed;
    cfg.validate();

    fs::create_directories(out_dir);
    cfg.save(fs::path(out_dir) / "config.txt");
    if (generate->parsed()) return cmd_generate(cfg, out_dir, out);
    if (train->parsed()) return cmd_train_source(cfg, out_dir, out);
    if (adapt_cmd->parsed()) return cmd_adapt(cfg, out_dir, out);
    if (eval->parsed()) return cmd_eval(cfg, out_dir, out);
    if (analyze->parsed()) return cmd_analyze(cfg, out_dir, out);
    if (ablate->parsed()) return cmd_ablate(cfg, suite, out_dir, out, err);
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}

}  // namespace s4t::cli
