#include "sleepssl/config.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace sleepssl::harness {

namespace {

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return {};
  const auto b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

std::string unquote(std::string v) {
  if (v.size() >= 2 && ((v.front() == '"' && v.back() == '"') ||
                        (v.front() == '\'' && v.back() == '\'')))
    return v.substr(1, v.size() - 2);
  return v;
}

std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(unquote(item));
  }
  return out;
}

using Section = std::map<std::string, std::string>;

std::map<std::string, Section> parse_sections(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("config: cannot open " + path.string());
  std::map<std::string, Section> sections;
  std::string line, current = "";
  int lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[' && line.back() == ']') {
      current = trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw std::runtime_error("config: expected key = value at " + path.string() + ":" +
                               std::to_string(lineno));
    sections[current][trim(line.substr(0, eq))] = unquote(trim(line.substr(eq + 1)));
  }
  return sections;
}

const std::string& need(const Section& s, const std::string& key, const std::string& section) {
  auto it = s.find(key);
  if (it == s.end())
    throw std::runtime_error("config: missing key '" + key + "' in section [" + section + "]");
  return it->second;
}

template <typename T>
T get_or(const Section& s, const std::string& key, T fallback) {
  auto it = s.find(key);
  if (it == s.end()) return fallback;
  if constexpr (std::is_same_v<T, std::string>) return it->second;
  else if constexpr (std::is_same_v<T, double>) return std::stod(it->second);
  else if constexpr (std::is_same_v<T, int>) return std::stoi(it->second);
  else return static_cast<T>(std::stoll(it->second));
}

}  // namespace

RunFile parse_run_file(const std::filesystem::path& path) {
  auto sections = parse_sections(path);
  RunFile rf;
  ExperimentConfig& c = rf.base;

  const Section& ds = sections["dataset"];
  c.manifest_path = need(ds, "manifest", "dataset");
  // dataset_name is filled from the manifest at run time when left empty.
  c.dataset_name = get_or<std::string>(ds, "name", "");

  const Section& mo = sections["model"];
  c.model.backbone = models::backbone_from_string(need(mo, "backbone", "model"));
  c.model.sampling_rate_hz = get_or<int64_t>(mo, "sampling_rate_hz", 100);
  c.model.input_len = 30 * c.model.sampling_rate_hz;
  c.model.cnn_ch1 = get_or<int64_t>(mo, "cnn_ch1", c.model.cnn_ch1);
  c.model.cnn_ch2 = get_or<int64_t>(mo, "cnn_ch2", c.model.cnn_ch2);
  c.model.cnn_ch3 = get_or<int64_t>(mo, "cnn_ch3", c.model.cnn_ch3);
  c.model.branch_ch = get_or<int64_t>(mo, "branch_ch", c.model.branch_ch);
  c.model.branch_ch2 = get_or<int64_t>(mo, "branch_ch2", c.model.branch_ch2);
  c.model.afr_ch = get_or<int64_t>(mo, "afr_ch", c.model.afr_ch);
  c.model.lstm_hidden = get_or<int64_t>(mo, "lstm_hidden", c.model.lstm_hidden);
  c.model.lstm_layers = get_or<int64_t>(mo, "lstm_layers", c.model.lstm_layers);
  c.model.attn_heads = get_or<int64_t>(mo, "attn_heads", c.model.attn_heads);
  c.model.attn_ff = get_or<int64_t>(mo, "attn_ff", c.model.attn_ff);
  c.model.attn_layers = get_or<int64_t>(mo, "attn_layers", c.model.attn_layers);
  c.model.dropout = get_or<double>(mo, "dropout", c.model.dropout);

  const Section& tr = sections["train"];
  c.pretrain_budget.epochs = get_or<int64_t>(tr, "pretrain_epochs", 40);
  c.finetune_budget.epochs = get_or<int64_t>(tr, "finetune_epochs", 40);
  c.pretrain_budget.batch = c.finetune_budget.batch = get_or<int64_t>(tr, "batch", 128);
  c.pretrain_budget.lr = c.finetune_budget.lr = get_or<double>(tr, "lr", 1e-3);
  c.pretrain_budget.weight_decay = c.finetune_budget.weight_decay =
      get_or<double>(tr, "weight_decay", 1e-4);

  const Section& ex = sections["experiment"];
  c.folds = get_or<int>(ex, "folds", 5);
  c.seed = get_or<uint64_t>(ex, "seed", 42);
  c.imbalance = imbalance_from_string(get_or<std::string>(ex, "imbalance", "none"));
  c.te_mode = te_mode_from_string(get_or<std::string>(ex, "te_mode", "native"));
  c.algorithm = algorithm_from_string(get_or<std::string>(ex, "algorithm", "supervised"));
  c.label_fraction = get_or<double>(ex, "label_fraction", 1.0);
  for (const auto& a : split_list(get_or<std::string>(ex, "algorithms", "")))
    rf.algorithms.push_back(algorithm_from_string(a));
  for (const auto& v : split_list(get_or<std::string>(ex, "label_fractions", "")))
    rf.label_fractions.push_back(std::stod(v));

  const Section& au = sections["augment"];
  c.pretext_cfg.views.noise_sigma = get_or<double>(au, "noise_sigma", 0.8);
  c.pretext_cfg.views.weak_noise_sigma = get_or<double>(au, "weak_noise_sigma", 0.4);
  c.pretext_cfg.views.weak_scale_sigma = get_or<double>(au, "weak_scale_sigma", 0.1);
  c.pretext_cfg.views.shift_fraction = get_or<double>(au, "shift_fraction", 0.2);
  c.pretext_cfg.views.n_segments = get_or<int>(au, "n_segments", 5);

  const Section& px = sections["pretext"];
  c.pretext_cfg.tau = get_or<double>(px, "tau", 0.2);
  c.pretext_cfg.projection_dim = get_or<int64_t>(px, "projection_dim", 128);
  c.pretext_cfg.cpc.context_len_fraction = get_or<double>(px, "cpc_context_fraction", 0.5);
  c.pretext_cfg.cpc.k_future = get_or<int64_t>(px, "cpc_k_future", 4);
  c.pretext_cfg.cpc.aggregator_hidden = get_or<int64_t>(px, "cpc_aggregator_hidden", 0);
  c.pretext_cfg.lambda1 = get_or<double>(px, "lambda1", 1.0);
  c.pretext_cfg.lambda2 = get_or<double>(px, "lambda2", 1.0);

  const Section& out = sections["output"];
  rf.results_path = get_or<std::string>(out, "results", "results.jsonl");
  rf.work_dir = get_or<std::string>(out, "work_dir", "work");
  return rf;
}

std::vector<ExperimentConfig> expand_grid(const RunFile& rf) {
  std::vector<Algorithm> algos =
      rf.algorithms.empty() ? std::vector<Algorithm>{rf.base.algorithm} : rf.algorithms;
  std::vector<double> fracs = rf.label_fractions.empty()
                                  ? std::vector<double>{rf.base.label_fraction}
                                  : rf.label_fractions;
  std::vector<ExperimentConfig> out;
  for (Algorithm a : algos)
    for (double f : fracs) {
      ExperimentConfig c = rf.base;
      c.algorithm = a;
      c.label_fraction = f;
      c.resolve_te();
      c.model.validate();
      out.push_back(std::move(c));
    }
  return out;
}

}  // namespace sleepssl::harness
