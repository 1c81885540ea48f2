// mobclip: command-line driver for the pipeline stages.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>
#include <openssl/evp.h>

#include "mobclip/mobclip.hpp"

namespace fs = std::filesystem;
using namespace mobclip;
using nlohmann::json;

namespace {

constexpr const char* kVersion = "0.1.0";

std::string sha256_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot open '" + path + "' for hashing");
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr);
  std::vector<char> buf(1 << 16);
  while (is) {
    is.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (is.gcount() > 0) EVP_DigestUpdate(ctx, buf.data(), static_cast<std::size_t>(is.gcount()));
  }
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned len = 0;
  EVP_DigestFinal_ex(ctx, md, &len);
  EVP_MD_CTX_free(ctx);
  std::ostringstream hex;
  for (unsigned i = 0; i < len; ++i) hex << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(md[i]);
  return hex.str();
}

struct Common {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  bool deterministic = false;
  std::string out = ".";
};

/// Records inputs, outputs, seeds and timings of one subcommand run.
class Manifest {
public:
  Manifest(std::string stage, const config::PipelineConfig& cfg, const Common& common)
      : stage_(std::move(stage)), start_(std::chrono::steady_clock::now()) {
    doc_["stage"] = stage_;
    doc_["config"] = config::to_json(cfg);
    doc_["config_file"] = common.config_path;
    doc_["deterministic"] = common.deterministic;
    doc_["seeds"] = {{"synth", cfg.synth.seed}, {"graph", cfg.graph.seed}, {"line", cfg.line.seed},
                     {"align", cfg.align.seed}, {"probe", cfg.probe.seed}, {"distill", cfg.distill.seed}};
    doc_["versions"] = {{"mobclip", kVersion},
                        {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                                      std::to_string(EIGEN_MINOR_VERSION)},
                        {"compiler", __VERSION__}};
    doc_["inputs"] = json::object();
    doc_["outputs"] = json::object();
  }

  void input(const std::string& path) { doc_["inputs"][path] = sha256_file(path); }
  void output(const std::string& path) { doc_["outputs"][path] = sha256_file(path); }

  void stage_time(const std::string& name, double seconds) { doc_["wall_seconds"][name] = seconds; }

  void write(const std::string& dir) {
    doc_["wall_seconds"]["total"] =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    std::ofstream os(fs::path(dir) / (stage_ + ".manifest.json"));
    os << doc_.dump(2) << '\n';
  }

private:
  std::string stage_;
  std::chrono::steady_clock::time_point start_;
  json doc_;
};

class Stopwatch {
public:
  double lap() {
    const auto now = std::chrono::steady_clock::now();
    const double s = std::chrono::duration<double>(now - last_).count();
    last_ = now;
    return s;
  }

private:
  std::chrono::steady_clock::time_point last_ = std::chrono::steady_clock::now();
};

config::PipelineConfig load_config(const Common& c) {
  config::PipelineConfig cfg = c.config_path.empty() ? config::from_json(json::object()) : config::load(c.config_path);
  if (c.seed) cfg.set_seed(*c.seed);
  if (c.deterministic) cfg.set_deterministic();
  return cfg;
}

std::string out_path(const Common& c, const std::string& name) {
  fs::create_directories(c.out);
  return (fs::path(c.out) / name).string();
}

std::ofstream open_out(const std::string& path, bool binary = false) {
  std::ofstream os(path, binary ? std::ios::binary : std::ios::out);
  if (!os) throw Error("cannot open '" + path + "' for writing");
  return os;
}

std::ifstream open_in(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot open '" + path + "'");
  return is;
}

void warn(const std::string& msg) { std::cerr << "warning\t" << msg << '\n'; }

// ---------------------------------------------------------------------------
// Subcommands

void cmd_synth(const Common& c) {
  auto cfg = load_config(c);
  Manifest man("synth", cfg, c);
  Stopwatch sw;
  const auto data = synth::generate(cfg.synth);
  man.stage_time("generate", sw.lap());

  std::vector<std::string> outs;
  auto emit = [&](const std::string& name, auto&& writer, bool binary = false) {
    const auto p = out_path(c, name);
    auto os = open_out(p, binary);
    writer(os);
    os.close();
    outs.push_back(p);
  };
  emit("events.tsv", [&](std::ostream& os) { graph::write_events(os, data.events); });
  emit("text.tsv", [&](std::ostream& os) { io::write_vector_table(os, data.modalities[align::Modality::text]); });
  emit("image.tsv", [&](std::ostream& os) { io::write_vector_table(os, data.modalities[align::Modality::image]); });
  emit("demo.tsv", [&](std::ostream& os) { io::write_vector_table(os, data.modalities[align::Modality::demo]); });
  emit("latents.emb", [&](std::ostream& os) { io::write_embeddings(os, synth::latent_table(data)); }, true);
  for (const auto& t : data.tasks)
    emit(t.name + ".task", [&](std::ostream& os) { probe::write_task(os, t); });
  man.stage_time("write", sw.lap());
  for (const auto& p : outs) man.output(p);
  man.write(c.out);
}

struct GridIndexArgs {
  std::string input;
  bool reverse = false;
};

void cmd_grid_index(const Common& c, const GridIndexArgs& a) {
  auto cfg = load_config(c);
  Manifest man("grid-index", cfg, c);
  man.input(a.input);
  auto is = open_in(a.input);
  const auto p = out_path(c, a.reverse ? "centroids.tsv" : "cells.tsv");
  auto os = open_out(p);
  os << std::setprecision(17);
  std::string line;
  std::int64_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto s = io::trim(line);
    if (s.empty() || s.front() == '#') continue;
    const auto cols = io::split(s, '\t');
    if (a.reverse) {
      if (cols.size() != 1) throw ParseError("expected one cell id per line", lineno);
      const CellId cell = io::parse_cell(cols[0], lineno);
      const auto g = hexgrid::centroid_of(cell, cfg.grid);
      os << cell.packed() << '\t' << g.lat << '\t' << g.lon << '\n';
    } else {
      if (cols.size() != 2) throw ParseError("expected 'lat<TAB>lon'", lineno);
      const hexgrid::GeoCoord g{io::parse_number<double>(cols[0], lineno, "latitude"),
                                io::parse_number<double>(cols[1], lineno, "longitude")};
      os << io::trim(cols[0]) << '\t' << io::trim(cols[1]) << '\t' << hexgrid::cell_of(g, cfg.grid).packed() << '\n';
    }
  }
  os.close();
  man.output(p);
  man.write(c.out);
}

void cmd_build_graph(const Common& c, const std::string& events, bool edge_list) {
  auto cfg = load_config(c);
  Manifest man("build-graph", cfg, c);
  man.input(events);
  Stopwatch sw;
  auto is = open_in(events);
  graph::GraphBuilder builder;
  graph::read_events(is, &cfg.grid, [&](graph::EventRecord&& e) { builder.add(std::move(e)); });
  const auto g = builder.finish(cfg.graph.threads);
  man.stage_time("build", sw.lap());
  const auto p = out_path(c, "graph.mgr");
  graph::save_graph(p, g);
  man.output(p);
  if (edge_list) {
    const auto e = out_path(c, "edges.tsv");
    auto os = open_out(e);
    graph::write_edge_list(os, g);
    os.close();
    man.output(e);
  }
  std::cerr << "info\tgraph has " << g.node_count() << " nodes and " << g.edge_count() << " edges\n";
  man.write(c.out);
}

struct SampleArgs {
  std::string graph;
  std::optional<double> ratio;
  std::optional<std::string> mode;
};

void cmd_sample_graph(const Common& c, const SampleArgs& a) {
  auto cfg = load_config(c);
  if (a.ratio) cfg.graph.ratio = *a.ratio;
  if (a.mode) {
    if (*a.mode == "topk") cfg.graph.sample_mode = config::SampleMode::topk;
    else if (*a.mode == "random") cfg.graph.sample_mode = config::SampleMode::random;
    else throw ConfigError("--mode must be 'topk' or 'random'");
  }
  cfg.validate();
  Manifest man("sample-graph", cfg, c);
  man.input(a.graph);
  const auto g = graph::load_graph(a.graph);
  const auto sub = cfg.graph.sample_mode == config::SampleMode::topk ? graph::sample_topk(g, cfg.graph.ratio)
                                                                     : graph::sample_random(g, cfg.graph.ratio, cfg.graph.seed);
  const auto p = out_path(c, "subgraph.mgr");
  graph::save_graph(p, sub);
  man.output(p);
  std::cerr << "info\tkept " << sub.edge_count() << " of " << g.edge_count() << " edges\n";
  man.write(c.out);
}

void cmd_train_line(const Common& c, const std::string& graph_path) {
  auto cfg = load_config(c);
  Manifest man("train-line", cfg, c);
  man.input(graph_path);
  const auto g = graph::load_graph(graph_path);
  Stopwatch sw;
  const auto res = line::train_line(g, cfg.line);
  man.stage_time("train", sw.lap());
  if (!res.isolated.empty()) warn(std::to_string(res.isolated.size()) + " isolated nodes received zero vectors");
  const auto p = out_path(c, "line.emb");
  io::save_embeddings(p, res.embeddings);
  man.output(p);
  man.write(c.out);
}

struct AlignArgs {
  std::string graph;
  std::string init;
  std::string text;
  std::string image;
  std::string demo;
};

void cmd_train_align(const Common& c, const AlignArgs& a) {
  auto cfg = load_config(c);
  Manifest man("train-align", cfg, c);
  for (const auto* p : {&a.graph, &a.init, &a.text, &a.image, &a.demo})
    if (!p->empty()) man.input(*p);
  const auto g = graph::load_graph(a.graph);
  const auto init = io::load_any_table(a.init);
  align::ModalityTables tables;
  if (!a.image.empty()) tables[align::Modality::image] = io::load_any_table(a.image);
  if (!a.text.empty()) tables[align::Modality::text] = io::load_any_table(a.text);
  if (!a.demo.empty()) tables[align::Modality::demo] = io::load_any_table(a.demo);
  Stopwatch sw;
  const auto res = align::train_align(g, init, tables, cfg.align, warn);
  man.stage_time("train", sw.lap());
  const auto p = out_path(c, "mobclip.emb");
  io::save_embeddings(p, res.embeddings);
  const auto l = out_path(c, "train_log.tsv");
  {
    auto os = open_out(l);
    align::write_training_log(os, res.log);
  }
  man.output(p);
  man.output(l);
  man.write(c.out);
}

void cmd_export_emb(const Common& c, const std::string& input, const std::string& format, bool normalize) {
  auto cfg = load_config(c);
  Manifest man("export-emb", cfg, c);
  man.input(input);
  auto t = io::load_any_table(input);
  if (normalize) t = EmbeddingTable(t.ids(), align::normalize_rows(t.values()));
  std::string p;
  if (format == "tsv") {
    p = out_path(c, "embeddings.tsv");
    auto os = open_out(p);
    io::write_vector_table(os, t);
  } else if (format == "emb1") {
    p = out_path(c, "embeddings.emb");
    io::save_embeddings(p, t);
  } else {
    throw ConfigError("--format must be 'tsv' or 'emb1'");
  }
  man.output(p);
  man.write(c.out);
}

void cmd_probe(const Common& c, const std::string& emb_path, const std::vector<std::string>& tasks) {
  auto cfg = load_config(c);
  Manifest man("probe", cfg, c);
  man.input(emb_path);
  const auto emb = io::load_any_table(emb_path);
  std::vector<probe::TaskDataset> ds;
  for (const auto& t : tasks) {
    man.input(t);
    auto is = open_in(t);
    ds.push_back(probe::read_task(is, fs::path(t).stem().string()));
  }
  const auto reports = probe::run_benchmark(emb, ds, cfg.probe);
  for (const auto& r : reports) {
    if (r.error) warn("task '" + r.task + "' failed: " + *r.error);
    if (r.dropped_units) warn("task '" + r.task + "' dropped " + std::to_string(r.dropped_units) + " units");
  }
  const auto p = out_path(c, "report.tsv");
  {
    auto os = open_out(p);
    probe::write_report(os, reports);
  }
  probe::write_report(std::cout, reports);
  man.output(p);
  man.write(c.out);
}

void cmd_distill(const Common& c, const std::string& emb_path) {
  auto cfg = load_config(c);
  Manifest man("distill", cfg, c);
  man.input(emb_path);
  const auto emb = io::load_any_table(emb_path);
  std::vector<hexgrid::GeoCoord> centroids;
  for (CellId id : emb.ids()) centroids.push_back(hexgrid::centroid_of(id, cfg.grid));
  auto dc = cfg.distill;
  dc.out_dim = emb.dim();
  Stopwatch sw;
  const auto res = distill::train_distill<float>(centroids, emb.values(), dc);
  man.stage_time("train", sw.lap());
  const auto p = out_path(c, "surrogate.sur");
  distill::io::save_surrogate(p, res.surrogate);
  const auto l = out_path(c, "distill_loss.tsv");
  {
    auto os = open_out(l);
    for (std::size_t e = 0; e < res.loss_trace.size(); ++e) os << e + 1 << '\t' << res.loss_trace[e] << '\n';
  }
  std::cerr << "info\tfinal training MSE " << res.final_loss << " after " << res.loss_trace.size() << " epochs\n";
  man.output(p);
  man.output(l);
  man.write(c.out);
}

void cmd_query(const Common& c, const std::string& surrogate, const std::string& input) {
  auto cfg = load_config(c);
  Manifest man("query", cfg, c);
  man.input(surrogate);
  man.input(input);
  const auto sur = distill::io::load_surrogate<float>(surrogate);
  auto is = open_in(input);
  const auto p = out_path(c, "query.tsv");
  auto os = open_out(p);
  std::string line;
  std::int64_t lineno = 0;
  char buf[64];
  while (std::getline(is, line)) {
    ++lineno;
    const auto s = io::trim(line);
    if (s.empty() || s.front() == '#') continue;
    const auto cols = io::split(s, '\t');
    if (cols.size() != 2) throw ParseError("expected 'lat<TAB>lon'", lineno);
    const hexgrid::GeoCoord g{io::parse_number<double>(cols[0], lineno, "latitude"),
                              io::parse_number<double>(cols[1], lineno, "longitude")};
    const auto v = sur.query(g);
    os << io::trim(cols[0]) << '\t' << io::trim(cols[1]) << '\t';
    for (Eigen::Index j = 0; j < v.size(); ++j) {
      auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v[j]);
      if (j) os << ',';
      os.write(buf, end - buf);
    }
    os << '\n';
  }
  os.close();
  man.output(p);
  man.write(c.out);
}

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("--config", c.config_path, "JSON configuration file")->check(CLI::ExistingFile);
  sub->add_option("--seed", c.seed, "Override every module seed");
  sub->add_flag("--deterministic", c.deterministic, "Force single-threaded, reproducible code paths");
  sub->add_option("--out", c.out, "Output directory");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"mobclip: mobility-centred multimodal region embeddings"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kVersion);
  Common common;

  auto* synth = app.add_subcommand("synth", "Generate a synthetic region with planted latent factors");
  add_common(synth, common);

  GridIndexArgs gi;
  auto* grid = app.add_subcommand("grid-index", "Map 'lat<TAB>lon' rows to cell ids (or cells to centroids)");
  add_common(grid, common);
  grid->add_option("--input", gi.input, "Input file")->required()->check(CLI::ExistingFile);
  grid->add_flag("--reverse", gi.reverse, "Input holds cell ids; write their centroids");

  std::string events;
  bool edge_list = false;
  auto* build = app.add_subcommand("build-graph", "Build the co-visitation graph from an event log");
  add_common(build, common);
  build->add_option("--events", events, "Event TSV")->required()->check(CLI::ExistingFile);
  build->add_flag("--edge-list", edge_list, "Also write a text edge list");

  SampleArgs sa;
  auto* sample = app.add_subcommand("sample-graph", "Top-k or random per-node edge sampling");
  add_common(sample, common);
  sample->add_option("--graph", sa.graph, "Input MGR1 graph")->required()->check(CLI::ExistingFile);
  sample->add_option("--ratio", sa.ratio, "Kept fraction of each node's edges");
  sample->add_option("--mode", sa.mode, "topk or random");

  std::string line_graph;
  auto* line = app.add_subcommand("train-line", "Second-order LINE embeddings of the full graph");
  add_common(line, common);
  line->add_option("--graph", line_graph, "Input MGR1 graph")->required()->check(CLI::ExistingFile);

  AlignArgs aa;
  auto* align = app.add_subcommand("train-align", "Contrastive alignment of mobility with auxiliary modalities");
  add_common(align, common);
  align->add_option("--graph", aa.graph, "Sampled MGR1 subgraph")->required()->check(CLI::ExistingFile);
  align->add_option("--init", aa.init, "LINE embeddings")->required()->check(CLI::ExistingFile);
  align->add_option("--text", aa.text, "Text vectors (TSV or EMB1)")->check(CLI::ExistingFile);
  align->add_option("--image", aa.image, "Image vectors (TSV or EMB1)")->check(CLI::ExistingFile);
  align->add_option("--demo", aa.demo, "Demographic histograms (TSV or EMB1)")->check(CLI::ExistingFile);

  std::string export_in, export_format = "tsv";
  bool export_norm = false;
  auto* exp = app.add_subcommand("export-emb", "Convert embeddings between EMB1 and TSV");
  add_common(exp, common);
  exp->add_option("--input", export_in, "Embedding file")->required()->check(CLI::ExistingFile);
  exp->add_option("--format", export_format, "tsv or emb1");
  exp->add_flag("--normalize", export_norm, "L2-normalize rows");

  std::string probe_emb;
  std::vector<std::string> probe_tasks;
  auto* prb = app.add_subcommand("probe", "Ridge-regression probes over task files");
  add_common(prb, common);
  prb->add_option("--emb", probe_emb, "Embedding file")->required()->check(CLI::ExistingFile);
  prb->add_option("--task", probe_tasks, "Task file (repeatable)")->required()->check(CLI::ExistingFile);

  std::string distill_emb;
  auto* dst = app.add_subcommand("distill", "Fit a coordinate-to-embedding surrogate");
  add_common(dst, common);
  dst->add_option("--emb", distill_emb, "Teacher embeddings")->required()->check(CLI::ExistingFile);

  std::string q_sur, q_in;
  auto* qry = app.add_subcommand("query", "Embed 'lat<TAB>lon' rows with a surrogate");
  add_common(qry, common);
  qry->add_option("--surrogate", q_sur, "Surrogate file")->required()->check(CLI::ExistingFile);
  qry->add_option("--input", q_in, "Coordinate file")->required()->check(CLI::ExistingFile);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error\tusage\t" << e.what() << '\n';
    return 64;
  }

  try {
    if (*synth) cmd_synth(common);
    else if (*grid) cmd_grid_index(common, gi);
    else if (*build) cmd_build_graph(common, events, edge_list);
    else if (*sample) cmd_sample_graph(common, sa);
    else if (*line) cmd_train_line(common, line_graph);
    else if (*align) cmd_train_align(common, aa);
    else if (*exp) cmd_export_emb(common, export_in, export_format, export_norm);
    else if (*prb) cmd_probe(common, probe_emb, probe_tasks);
    else if (*dst) cmd_distill(common, distill_emb);
    else if (*qry) cmd_query(common, q_sur, q_in);
  } catch (const Error& e) {
    std::cerr << "error\t" << e.kind() << '\t' << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error\tinternal\t" << e.what() << '\n';
    return 1;
  }
  return 0;
}
