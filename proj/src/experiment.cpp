#include "ssgan/experiment.hpp"

#include "ssgan/serialization.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

namespace ssgan {

namespace fs = std::filesystem;

namespace {

std::string lower(std::string_view s) {
  std::string out(s);
  for (char& c : out) c = char(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

std::string trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return std::string(s);
}

FamilySet token_families(std::string_view token) {
  const std::string t = lower(token);
  if (t == "rotation" || t == "rotate") return {Family::rotation};
  if (t == "translation" || t == "translate") return {Family::translation};
  if (t == "shear") return {Family::shear};
  if (t == "temporal") return {Family::temporal};
  if (t == "spatial") return FamilySet::spatial();
  if (t == "spatiotemporal") return FamilySet::all();
  throw ConfigError("unknown variant component '" + std::string(token) + "'");
}

FamilySet merge(FamilySet a, FamilySet b) {
  for (Family f : b.members()) a.insert(f);
  return a;
}

std::string fmt(const char* format, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, format, v);
  return buf;
}

std::string xml_escape(std::string_view s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

const char* const kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e",
                                "#9467bd", "#8c564b", "#e377c2", "#17becf"};

}  // namespace

std::string variant_name(FamilySet families) {
  if (families.empty()) return "GAN";
  if (families == FamilySet::all()) return "GAN+SpatioTemporal";
  if (families == FamilySet::spatial()) return "GAN+Spatial";
  if (families == FamilySet{Family::rotation}) return "GAN+Rotation";
  if (families == FamilySet{Family::temporal}) return "GAN+Temporal";
  std::string out = "GAN";
  if (families.contains(Family::rotation)) out += "+Rotate";
  if (families.contains(Family::translation)) out += "+Translate";
  if (families.contains(Family::shear)) out += "+Shear";
  if (families.contains(Family::temporal)) out += "+Temporal";
  return out;
}

FamilySet variant_families(std::string_view name) {
  const std::string s = trim(name);
  if (lower(s.substr(0, 3)) != "gan") throw ConfigError("variant name must start with GAN: '" + s + "'");
  std::string_view rest = std::string_view(s).substr(3);
  FamilySet out;
  if (rest.empty()) return out;
  if (rest.front() != '+') throw ConfigError("malformed variant name '" + s + "'");
  rest.remove_prefix(1);
  while (true) {
    const auto plus = rest.find('+');
    const std::string_view token = rest.substr(0, plus);
    if (token.empty()) throw ConfigError("malformed variant name '" + s + "'");
    out = merge(out, token_families(token));
    if (plus == std::string_view::npos) break;
    rest.remove_prefix(plus + 1);
  }
  return out;
}

std::vector<std::string> table1_variants() {
  return {"GAN", "GAN+Rotation", "GAN+Spatial", "GAN+Temporal", "GAN+SpatioTemporal"};
}

std::vector<std::string> table2_variants() {
  std::vector<std::string> out;
  for (const FamilySet f :
       {FamilySet{}, FamilySet{Family::rotation}, FamilySet{Family::translation},
        FamilySet{Family::shear}, FamilySet{Family::rotation, Family::translation},
        FamilySet{Family::translation, Family::shear}, FamilySet{Family::rotation, Family::shear},
        FamilySet::spatial()}) {
    out.push_back(variant_name(f));
  }
  return out;
}

std::vector<std::string> parse_variant_list(std::string_view list) {
  const std::string l = lower(trim(list));
  if (l == "table1") return table1_variants();
  if (l == "table2") return table2_variants();
  std::vector<std::string> out;
  std::set<std::string> seen;
  std::string_view rest = list;
  while (!rest.empty()) {
    const auto comma = rest.find(',');
    const std::string item = trim(rest.substr(0, comma));
    if (!item.empty()) {
      const std::string name = variant_name(variant_families(item));
      if (seen.insert(name).second) out.push_back(name);
    }
    if (comma == std::string_view::npos) break;
    rest.remove_prefix(comma + 1);
  }
  return out;
}

TrainConfig train_config_for_variant(TrainConfig base, FamilySet families) {
  base.families = families;
  if (families.empty()) {
    base.alpha = 0.0;
    base.beta = 0.0;
  }
  return base;
}

// ---------------------------------------------------------------------------

void ExperimentConfig::validate() const {
  const FamilySet families = variant_families(variant);
  if (!(train.families == families)) {
    throw ConfigError("variant " + variant + " does not match families '" + train.families.str() +
                      "'");
  }
  if (families.empty() && (train.alpha != 0.0 || train.beta != 0.0)) {
    throw ConfigError("the plain GAN variant needs alpha = beta = 0");
  }
  train.validate();
  probe.validate();
  (void)split_counts(data.clips);
  if (seeds.empty()) throw ConfigError("at least one seed is required");
  if (folds < 2) throw ConfigError("fold count must be at least 2");
}

json ExperimentConfig::to_json() const {
  json s = json::array();
  for (auto v : seeds) s.push_back(v);
  return {{"variant", variant},
          {"train", ssgan::to_json(train)},
          {"data",
           {{"frames", data.shape.frames},
            {"channels", data.shape.channels},
            {"height", data.shape.height},
            {"width", data.shape.width},
            {"clips", data.clips},
            {"seed", data.seed}}},
          {"seeds", s},
          {"probe", ssgan::to_json(probe)},
          {"folds", folds},
          {"out", out.string()}};
}

ExperimentConfig ExperimentConfig::from_json(const json& j, ExperimentConfig c) {
  if (!j.is_object()) throw ConfigError("experiment config must be a JSON object");
  bool families_given = false;
  try {
    for (const auto& [key, value] : j.items()) {
      if (key == "variant") {
        c.variant = value.get<std::string>();
      } else if (key == "train") {
        c.train = train_config_from_json(value, c.train);
        families_given = value.contains("families");
      } else if (key == "data") {
        for (const auto& [k, v] : value.items()) {
          if (k == "frames") c.data.shape.frames = v.get<int>();
          else if (k == "channels") c.data.shape.channels = v.get<int>();
          else if (k == "height") c.data.shape.height = v.get<int>();
          else if (k == "width") c.data.shape.width = v.get<int>();
          else if (k == "clips") c.data.clips = v.get<int>();
          else if (k == "seed") c.data.seed = v.get<std::uint64_t>();
          else throw ConfigError("unknown data config key '" + k + "'");
        }
      } else if (key == "seeds") {
        c.seeds = value.get<std::vector<std::uint64_t>>();
      } else if (key == "probe") {
        c.probe = probe_config_from_json(value, c.probe);
      } else if (key == "folds") {
        c.folds = value.get<int>();
      } else if (key == "out") {
        c.out = value.get<std::string>();
      } else {
        throw ConfigError("unknown experiment config key '" + key + "'");
      }
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed experiment config: ") + e.what());
  }
  const FamilySet families = variant_families(c.variant);
  if (families_given && !(c.train.families == families)) {
    throw ConfigError("variant " + c.variant + " conflicts with train.families '" +
                      c.train.families.str() + "'");
  }
  c.variant = variant_name(families);
  c.train = train_config_for_variant(c.train, families);
  return c;
}

ExperimentConfig ExperimentConfig::from_json(const json& j) {
  return from_json(j, ExperimentConfig{});
}

ExperimentConfig ExperimentConfig::load(const fs::path& path) {
  std::string text;
  try {
    text = read_text(path);
  } catch (const LoadError&) {
    throw ConfigError("cannot read config file " + path.string());
  }
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError("config file " + path.string() + " is not valid JSON: " + e.what());
  }
  return from_json(j);
}

fs::path run_directory(const fs::path& out, std::string_view variant, std::uint64_t seed) {
  return out / std::string(variant) / std::to_string(seed);
}

// ---------------------------------------------------------------------------

json CellResult::to_json() const {
  json j = {{"variant", variant}, {"seed", seed}, {"status", ok ? "ok" : "failed"}};
  if (ok) {
    j["folds"] = report.folds;
    j["mean"] = report.mean;
    j["std"] = report.std;
  } else {
    j["error"] = error;
  }
  return j;
}

CellResult CellResult::from_json(const json& j) {
  CellResult c;
  try {
    c.variant = j.at("variant").get<std::string>();
    c.seed = j.at("seed").get<std::uint64_t>();
    c.ok = j.at("status") == "ok";
    if (c.ok) {
      c.report = summarize_folds(j.at("folds").get<std::vector<double>>());
      c.report.variant = c.variant;
      c.report.seed = c.seed;
    } else {
      c.error = j.value("error", std::string());
    }
  } catch (const json::exception& e) {
    throw LoadError(std::string("malformed results line: ") + e.what());
  }
  return c;
}

CellResult run_cell(const DatasetManifest& manifest, const ExperimentConfig& config,
                    std::string_view variant, std::uint64_t seed, const CellOptions& options) {
  CellResult cell;
  cell.seed = seed;
  cell.variant = std::string(variant);
  try {
    const FamilySet families = variant_families(variant);
    cell.variant = variant_name(families);
    TrainConfig tc = train_config_for_variant(config.train, families);
    tc.seed = seed;
    const fs::path dir = run_directory(config.out, cell.variant, seed);
    const fs::path eval_path = dir / "eval.json";

    if (options.reuse && fs::exists(eval_path)) {
      const EvalReport previous = EvalReport::from_json(json::parse(read_text(eval_path)));
      if (previous.config.value("train", json()) == to_json(tc) &&
          previous.config.value("probe", json()) == to_json(config.probe) &&
          previous.config.value("folds", 0) == config.folds &&
          previous.config.value("manifest_hash", std::string()) == manifest_hash(manifest)) {
        cell.report = previous;
        cell.ok = true;
        return cell;
      }
    }

    TrainOptions topts;
    topts.run_dir = dir;
    topts.on_epoch = options.on_epoch;
    const TrainResult trained = train(manifest, tc, topts);
    FeatureSet features;
    EvalReport report = evaluate_checkpoint(trained.final_checkpoint, manifest, config.probe, seed,
                                            &features, config.folds);
    save_feature_set(dir / "features", features);
    report.variant = cell.variant;
    report.config["manifest_hash"] = manifest_hash(manifest);
    write_text_atomic(eval_path, report.to_json().dump(2) + "\n");
    cell.report = std::move(report);
    cell.ok = true;
  } catch (const std::exception& e) {
    cell.ok = false;
    cell.error = e.what();
  }
  return cell;
}

std::vector<VariantSummary> summarize_variants(std::span<const CellResult> cells) {
  std::vector<VariantSummary> rows;
  std::map<std::string, std::vector<double>> folds;
  for (const CellResult& c : cells) {
    auto it = std::find_if(rows.begin(), rows.end(),
                           [&](const VariantSummary& r) { return r.variant == c.variant; });
    if (it == rows.end()) {
      rows.push_back({c.variant});
      it = rows.end() - 1;
    }
    if (c.ok) {
      ++it->seeds;
      auto& f = folds[c.variant];
      f.insert(f.end(), c.report.folds.begin(), c.report.folds.end());
    } else {
      ++it->failed;
    }
  }
  for (VariantSummary& r : rows) {
    const auto it = folds.find(r.variant);
    if (it == folds.end() || it->second.empty()) continue;
    const EvalReport s = summarize_folds(it->second);
    r.mean = s.mean;
    r.std = s.std;
  }
  return rows;
}

std::string format_table(std::span<const VariantSummary> rows) {
  std::size_t width = std::string("Method").size();
  for (const auto& r : rows) width = std::max(width, r.variant.size());
  std::ostringstream out;
  auto pad = [&](const std::string& s) { return s + std::string(width - s.size(), ' '); };
  out << pad("Method") << " | Accuracy (%)  | Seeds\n";
  out << std::string(width, '-') << "-+---------------+------\n";
  for (const auto& r : rows) {
    std::string acc = r.seeds > 0 ? fmt("%.2f", 100 * r.mean) + " ± " + fmt("%.2f", 100 * r.std)
                                  : std::string("failed");
    // "±" is two bytes but one column.
    const std::size_t shown = r.seeds > 0 ? acc.size() - 1 : acc.size();
    out << pad(r.variant) << " | " << acc << std::string(shown < 13 ? 13 - shown : 0, ' ') << " | "
        << r.seeds;
    if (r.failed > 0) out << " (" << r.failed << " failed)";
    out << "\n";
  }
  return out.str();
}

std::vector<CellResult> read_results(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw LoadError("cannot open results table " + path.string());
  std::vector<CellResult> out;
  std::string line;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    try {
      out.push_back(CellResult::from_json(json::parse(line)));
    } catch (const json::exception& e) {
      throw LoadError("malformed line in " + path.string() + ": " + e.what());
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

namespace {

struct Series {
  std::string label;
  std::vector<std::pair<double, double>> points;
  bool dashed = false;
  std::size_t colour = 0;
};

std::string line_chart(const std::string& title, const std::vector<Series>& series) {
  constexpr double W = 720, H = 420, L = 60, R = 200, T = 40, B = 50;
  double xmin = 0, xmax = 1, ymin = 0, ymax = 1;
  bool first = true;
  for (const auto& s : series) {
    for (const auto& [x, y] : s.points) {
      if (first) {
        xmin = xmax = x;
        ymin = ymax = y;
        first = false;
      }
      xmin = std::min(xmin, x), xmax = std::max(xmax, x);
      ymin = std::min(ymin, y), ymax = std::max(ymax, y);
    }
  }
  if (xmax == xmin) xmax = xmin + 1;
  if (ymax == ymin) ymax = ymin + 1;
  auto px = [&](double x) { return L + (x - xmin) / (xmax - xmin) * (W - L - R); };
  auto py = [&](double y) { return H - B - (y - ymin) / (ymax - ymin) * (H - T - B); };
  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
      << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  svg << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  svg << "<text x=\"" << W / 2 << "\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">"
      << xml_escape(title) << "</text>\n";
  svg << "<line x1=\"" << L << "\" y1=\"" << H - B << "\" x2=\"" << W - R << "\" y2=\"" << H - B
      << "\" stroke=\"black\"/>\n";
  svg << "<line x1=\"" << L << "\" y1=\"" << T << "\" x2=\"" << L << "\" y2=\"" << H - B
      << "\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double y = ymin + (ymax - ymin) * i / 4.0;
    svg << "<text x=\"" << L - 5 << "\" y=\"" << fmt("%.1f", py(y) + 4)
        << "\" text-anchor=\"end\">" << fmt("%.3g", y) << "</text>\n";
    const double x = xmin + (xmax - xmin) * i / 4.0;
    svg << "<text x=\"" << fmt("%.1f", px(x)) << "\" y=\"" << H - B + 15
        << "\" text-anchor=\"middle\">" << fmt("%.3g", x) << "</text>\n";
  }
  svg << "<text x=\"" << (L + W - R) / 2 << "\" y=\"" << H - 10
      << "\" text-anchor=\"middle\">epoch</text>\n";
  for (std::size_t i = 0; i < series.size(); ++i) {
    const Series& s = series[i];
    const char* colour = kPalette[s.colour % std::size(kPalette)];
    svg << "<polyline fill=\"none\" stroke=\"" << colour << "\" stroke-width=\"1.5\""
        << (s.dashed ? " stroke-dasharray=\"5,3\"" : "") << " points=\"";
    for (const auto& [x, y] : s.points) svg << fmt("%.2f", px(x)) << "," << fmt("%.2f", py(y)) << " ";
    svg << "\"/>\n";
    const double ly = T + 14.0 * double(i);
    svg << "<line x1=\"" << W - R + 10 << "\" y1=\"" << ly << "\" x2=\"" << W - R + 30
        << "\" y2=\"" << ly << "\" stroke=\"" << colour << "\""
        << (s.dashed ? " stroke-dasharray=\"5,3\"" : "") << "/>\n";
    svg << "<text x=\"" << W - R + 35 << "\" y=\"" << ly + 4 << "\">" << xml_escape(s.label)
        << "</text>\n";
  }
  svg << "</svg>\n";
  return svg.str();
}

std::string bar_chart(const std::vector<VariantSummary>& rows) {
  constexpr double H = 420, L = 60, T = 40, B = 120, bar = 48, gap = 24;
  const double W = L + 40 + double(rows.size()) * (bar + gap);
  auto py = [&](double v) { return H - B - v * (H - T - B); };
  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
      << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  svg << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  svg << "<text x=\"" << W / 2 << "\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">"
      << "Probe top-1 accuracy (mean ± std)</text>\n";
  svg << "<line x1=\"" << L << "\" y1=\"" << H - B << "\" x2=\"" << W - 20 << "\" y2=\"" << H - B
      << "\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    svg << "<text x=\"" << L - 5 << "\" y=\"" << fmt("%.1f", py(i / 4.0) + 4)
        << "\" text-anchor=\"end\">" << i * 25 << "%</text>\n";
  }
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& r = rows[i];
    const double x = L + 20 + double(i) * (bar + gap);
    if (r.seeds > 0) {
      svg << "<rect x=\"" << x << "\" y=\"" << fmt("%.2f", py(r.mean)) << "\" width=\"" << bar
          << "\" height=\"" << fmt("%.2f", py(0) - py(r.mean)) << "\" fill=\""
          << kPalette[i % std::size(kPalette)] << "\"/>\n";
      svg << "<line x1=\"" << x + bar / 2 << "\" y1=\""
          << fmt("%.2f", py(std::min(1.0, r.mean + r.std))) << "\" x2=\"" << x + bar / 2
          << "\" y2=\"" << fmt("%.2f", py(std::max(0.0, r.mean - r.std)))
          << "\" stroke=\"black\"/>\n";
      svg << "<text x=\"" << x + bar / 2 << "\" y=\"" << fmt("%.2f", py(r.mean) - 4)
          << "\" text-anchor=\"middle\">" << fmt("%.1f", 100 * r.mean) << "</text>\n";
    }
    svg << "<text transform=\"translate(" << x + bar / 2 << "," << H - B + 12
        << ") rotate(40)\">" << xml_escape(r.variant) << "</text>\n";
  }
  svg << "</svg>\n";
  return svg.str();
}

}  // namespace

std::string write_report(std::span<const CellResult> cells, const fs::path& runs_root,
                         const fs::path& out_dir) {
  fs::create_directories(out_dir);
  const std::vector<VariantSummary> rows = summarize_variants(cells);

  std::vector<Series> losses;
  std::size_t colour = 0;
  for (const CellResult& c : cells) {
    const fs::path metrics = run_directory(runs_root, c.variant, c.seed) / "metrics.jsonl";
    if (!fs::exists(metrics)) continue;
    Series g{c.variant + "/" + std::to_string(c.seed) + " G", {}, false, colour};
    Series d{c.variant + "/" + std::to_string(c.seed) + " D", {}, true, colour};
    std::ifstream in(metrics);
    std::string line;
    while (std::getline(in, line)) {
      if (trim(line).empty()) continue;
      const json j = json::parse(line);
      g.points.emplace_back(j.at("epoch").get<double>(), j.at("total_g").get<double>());
      d.points.emplace_back(j.at("epoch").get<double>(), j.at("total_d").get<double>());
    }
    losses.push_back(std::move(g));
    losses.push_back(std::move(d));
    ++colour;
  }
  write_text_atomic(out_dir / "loss_curves.svg", line_chart("Training losses (total)", losses));
  write_text_atomic(out_dir / "accuracy_bars.svg", bar_chart(rows));

  std::string summary;
  if (!rows.empty()) {
    summary = format_table(rows);
    summary += "\n";
    for (const CellResult& c : cells) {
      summary += c.variant + " seed " + std::to_string(c.seed) + ": ";
      summary += c.ok ? fmt("%.2f", 100 * c.report.mean) + " ± " + fmt("%.2f", 100 * c.report.std)
                      : "failed (" + c.error + ")";
      summary += "\n";
    }
  }
  write_text_atomic(out_dir / "summary.txt", summary);
  return summary;
}

}  // namespace ssgan
