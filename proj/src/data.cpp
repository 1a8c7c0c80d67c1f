// Copyright 2026 The kdda Authors
// SPDX-License-Identifier: Apache-2.0

#include "kdda/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <sstream>

#include "kdda/random.hpp"

namespace kdda {

DomainDataset::DomainDataset(std::size_t rows, std::size_t dim, std::vector<double> features,
                             std::optional<std::vector<int>> labels, std::string domain_id,
                             nlohmann::json generator_params)
    : rows_(rows),
      dim_(dim),
      features_(std::move(features)),
      labels_(std::move(labels)),
      domain_id_(std::move(domain_id)),
      generator_params_(std::move(generator_params)) {
  if (rows_ == 0 || dim_ == 0) throw ConfigError("dataset '" + domain_id_ + "': empty");
  if (features_.size() != rows_ * dim_) {
    throw ShapeError("dataset '" + domain_id_ + "': feature buffer size mismatch");
  }
  if (labels_) {
    if (labels_->size() != rows_) {
      throw ShapeError("dataset '" + domain_id_ + "': label count mismatch");
    }
    for (int l : *labels_) {
      if (l < 0) throw ConfigError("dataset '" + domain_id_ + "': negative label");
    }
  }
}

std::span<const int> DomainDataset::labels() const {
  if (!labels_) throw ConfigError("dataset '" + domain_id_ + "' is unlabeled");
  return *labels_;
}

std::size_t DomainDataset::class_count() const {
  if (!labels_) return 0;
  return static_cast<std::size_t>(*std::max_element(labels_->begin(), labels_->end())) + 1;
}

DomainDataset DomainDataset::without_labels() const {
  DomainDataset copy = *this;
  copy.labels_.reset();
  return copy;
}

DomainDataset DomainDataset::with_domain_id(std::string id) const {
  DomainDataset copy = *this;
  copy.domain_id_ = std::move(id);
  return copy;
}

DomainDataset DomainDataset::subset(std::span<const std::size_t> indices) const {
  std::vector<double> feats;
  feats.reserve(indices.size() * dim_);
  std::optional<std::vector<int>> labs;
  if (labels_) labs.emplace();
  for (std::size_t i : indices) {
    const auto r = row(i);
    feats.insert(feats.end(), r.begin(), r.end());
    if (labels_) labs->push_back((*labels_)[i]);
  }
  return DomainDataset(indices.size(), dim_, std::move(feats), std::move(labs), domain_id_,
                       generator_params_);
}

DiffTensor DomainDataset::gather(std::span<const std::size_t> indices) const {
  std::vector<double> out;
  out.reserve(indices.size() * dim_);
  for (std::size_t i : indices) {
    const auto r = row(i);
    out.insert(out.end(), r.begin(), r.end());
  }
  return DiffTensor::matrix(indices.size(), dim_, std::move(out));
}

std::vector<int> DomainDataset::gather_labels(std::span<const std::size_t> indices) const {
  const auto all = labels();
  std::vector<int> out;
  out.reserve(indices.size());
  for (std::size_t i : indices) out.push_back(all[i]);
  return out;
}

// ---- generators ----------------------------------------------------------------

DomainDataset gen_two_moons(const TwoMoonsParams& p) {
  if (p.n < 2) throw ConfigError("two_moons: n must be >= 2");
  if (p.noise_sigma < 0.0) throw ConfigError("two_moons: noise_sigma must be >= 0");
  if (p.label_flip_frac < 0.0 || p.label_flip_frac > 1.0) {
    throw ConfigError("two_moons: label_flip_frac must lie in [0, 1]");
  }
  const std::size_t n_outer = p.n / 2;
  const std::size_t n_inner = p.n - n_outer;
  auto angle = [](std::size_t i, std::size_t count) {
    return count == 1 ? 0.0
                      : std::numbers::pi * static_cast<double>(i) / static_cast<double>(count - 1);
  };
  std::vector<double> xy;
  xy.reserve(2 * p.n);
  std::vector<int> labels;
  labels.reserve(p.n);
  for (std::size_t i = 0; i < n_outer; ++i) {
    const double t = angle(i, n_outer);
    xy.push_back(std::cos(t));
    xy.push_back(std::sin(t));
    labels.push_back(0);
  }
  for (std::size_t i = 0; i < n_inner; ++i) {
    const double t = angle(i, n_inner);
    xy.push_back(1.0 - std::cos(t));
    xy.push_back(1.0 - std::sin(t) - 0.5);
    labels.push_back(1);
  }
  Rng noise(derive_seed(p.seed, "two_moons.noise"));
  for (double& v : xy) v += p.noise_sigma * noise.normal();

  const double theta = p.rotation_deg * std::numbers::pi / 180.0;
  const double c = std::cos(theta), s = std::sin(theta);
  for (std::size_t i = 0; i < p.n; ++i) {
    const double dx = xy[2 * i] - p.rotation_center[0];
    const double dy = xy[2 * i + 1] - p.rotation_center[1];
    xy[2 * i] = c * dx - s * dy + p.rotation_center[0] + p.translation[0];
    xy[2 * i + 1] = s * dx + c * dy + p.rotation_center[1] + p.translation[1];
  }
  if (p.label_flip_frac > 0.0) {
    Rng flips(derive_seed(p.seed, "two_moons.flip"));
    for (int& l : labels) {
      if (flips.uniform() < p.label_flip_frac) l = 1 - l;
    }
  }
  nlohmann::json params = {{"kind", "two_moons"},
                           {"n", p.n},
                           {"noise", p.noise_sigma},
                           {"rotation_deg", p.rotation_deg},
                           {"rotation_center", p.rotation_center},
                           {"translation", p.translation},
                           {"label_flip_frac", p.label_flip_frac},
                           {"seed", p.seed}};
  return DomainDataset(p.n, 2, std::move(xy), std::move(labels), p.domain_id, std::move(params));
}

DomainDataset gen_blobs(const BlobsParams& p) {
  if (p.centers.empty()) throw ConfigError("blobs: at least one center");
  if (p.n < p.centers.size()) throw ConfigError("blobs: n must cover every class");
  if (p.sigma < 0.0) throw ConfigError("blobs: sigma must be >= 0");
  const std::size_t d = p.centers.front().size();
  if (d == 0) throw ConfigError("blobs: centers need at least one coordinate");
  for (const auto& c : p.centers) {
    if (c.size() != d) throw ConfigError("blobs: centers differ in dimension");
  }
  const std::size_t k = p.centers.size();
  Rng rng(derive_seed(p.seed, "blobs"));
  std::vector<double> feats;
  std::vector<int> labels;
  for (std::size_t cls = 0; cls < k; ++cls) {
    const std::size_t count = p.n / k + (cls < p.n % k ? 1 : 0);
    for (std::size_t i = 0; i < count; ++i) {
      for (std::size_t j = 0; j < d; ++j) feats.push_back(p.centers[cls][j] + p.sigma * rng.normal());
      labels.push_back(static_cast<int>(cls));
    }
  }
  nlohmann::json params = {
      {"kind", "blobs"}, {"n", p.n}, {"centers", p.centers}, {"sigma", p.sigma}, {"seed", p.seed}};
  return DomainDataset(p.n, d, std::move(feats), std::move(labels), p.domain_id, std::move(params));
}

// ---- CSV ---------------------------------------------------------------------------

namespace {

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  std::istringstream in(line);
  while (std::getline(in, field, ',')) fields.push_back(field);
  if (!line.empty() && line.back() == ',') fields.emplace_back();
  for (std::string& f : fields) {
    const auto b = f.find_first_not_of(" \t\r");
    const auto e = f.find_last_not_of(" \t\r");
    f = b == std::string::npos ? std::string() : f.substr(b, e - b + 1);
  }
  return fields;
}

template <typename T>
bool parse_number(const std::string& text, T& out) {
  const char* first = text.data();
  const char* last = first + text.size();
  auto [ptr, ec] = std::from_chars(first, last, out);
  return ec == std::errc() && ptr == last;
}

}  // namespace

DomainDataset load_csv(const std::filesystem::path& path, const CsvSchema& schema) {
  std::ifstream in(path);
  if (!in) throw ConfigError("load_csv: cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) || line.find_first_not_of(" \t\r") == std::string::npos) {
    throw ConfigError("load_csv: " + path.string() + " is empty");
  }
  const std::vector<std::string> header = split_fields(line);
  std::map<std::size_t, std::size_t> feature_cols;  // feature index -> column
  std::optional<std::size_t> label_col, domain_col;
  for (std::size_t c = 0; c < header.size(); ++c) {
    const std::string& h = header[c];
    std::size_t idx = 0;
    if (h == "label") {
      label_col = c;
    } else if (h == "domain") {
      domain_col = c;
    } else if (h.size() > 1 && h[0] == 'f' && parse_number(h.substr(1), idx)) {
      if (!feature_cols.emplace(idx, c).second) {
        throw ConfigError("load_csv: duplicate column " + h);
      }
    } else {
      throw ConfigError("load_csv: unexpected column '" + h + "'");
    }
  }
  if (!domain_col) throw ConfigError("load_csv: missing required column 'domain'");
  if (feature_cols.empty()) throw ConfigError("load_csv: no feature columns f0..");
  const std::size_t d = feature_cols.size();
  for (std::size_t i = 0; i < d; ++i) {
    if (!feature_cols.count(i)) throw ConfigError("load_csv: missing column f" + std::to_string(i));
  }

  std::vector<double> feats;
  std::vector<int> labels;
  std::optional<std::string> domain;
  std::size_t line_no = 1, rows = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::vector<std::string> fields = split_fields(line);
    const std::string where = path.string() + ":" + std::to_string(line_no);
    if (fields.size() != header.size()) {
      throw ConfigError("load_csv: " + where + ": expected " + std::to_string(header.size()) +
                        " fields, got " + std::to_string(fields.size()));
    }
    const std::string& row_domain = fields[*domain_col];
    if (schema.domain && row_domain != *schema.domain) continue;
    if (!domain) {
      domain = row_domain;
    } else if (*domain != row_domain) {
      throw ConfigError("load_csv: " + where + ": mixed domains '" + *domain + "' and '" +
                        row_domain + "' (select one with a domain filter)");
    }
    for (std::size_t i = 0; i < d; ++i) {
      double v = 0.0;
      const std::string& text = fields[feature_cols[i]];
      if (!parse_number(text, v) || !std::isfinite(v)) {
        throw ConfigError("load_csv: " + where + ": non-numeric feature f" + std::to_string(i) +
                          " '" + text + "'");
      }
      feats.push_back(v);
    }
    if (label_col) {
      int l = 0;
      if (!parse_number(fields[*label_col], l) || l < 0 ||
          (schema.class_count && static_cast<std::size_t>(l) >= *schema.class_count)) {
        throw ConfigError("load_csv: " + where + ": label '" + fields[*label_col] +
                          "' out of range");
      }
      labels.push_back(l);
    }
    ++rows;
  }
  if (rows == 0) throw ConfigError("load_csv: " + path.string() + " has no data rows");
  std::optional<std::vector<int>> labs;
  if (label_col) labs = std::move(labels);
  nlohmann::json params = {{"kind", "csv"}, {"path", path.string()}};
  return DomainDataset(rows, d, std::move(feats), std::move(labs), *domain, std::move(params));
}

void save_csv(const DomainDataset& dataset, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw ConfigError("save_csv: cannot write " + path.string());
  for (std::size_t j = 0; j < dataset.dim(); ++j) out << 'f' << j << ',';
  if (dataset.labeled()) out << "label,";
  out << "domain\n";
  char buf[32];
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    for (double v : dataset.row(i)) {
      auto res = std::to_chars(buf, buf + sizeof buf, v);
      out.write(buf, res.ptr - buf);
      out << ',';
    }
    if (dataset.labeled()) out << dataset.labels()[i] << ',';
    out << dataset.domain_id() << '\n';
  }
}

DomainDataset merge_datasets(std::span<const DomainDataset> parts, std::string domain_id) {
  if (parts.empty()) throw ConfigError("merge_datasets: nothing to merge");
  const std::size_t d = parts[0].dim();
  const bool labeled = parts[0].labeled();
  std::vector<double> feats;
  std::vector<int> labels;
  std::size_t rows = 0;
  nlohmann::json provenance = nlohmann::json::array();
  for (const DomainDataset& p : parts) {
    if (p.dim() != d || p.labeled() != labeled) {
      throw ConfigError("merge_datasets: '" + p.domain_id() + "' differs in dim or labeling");
    }
    feats.insert(feats.end(), p.features().begin(), p.features().end());
    if (labeled) labels.insert(labels.end(), p.labels().begin(), p.labels().end());
    rows += p.size();
    provenance.push_back({{"domain", p.domain_id()}, {"params", p.generator_params()}});
  }
  std::optional<std::vector<int>> labs;
  if (labeled) labs = std::move(labels);
  return DomainDataset(rows, d, std::move(feats), std::move(labs), std::move(domain_id),
                       {{"kind", "merged"}, {"parts", provenance}});
}

Split split_dataset(const DomainDataset& dataset, double eval_fraction, std::uint64_t seed) {
  if (!(eval_fraction > 0.0 && eval_fraction < 1.0)) {
    throw ConfigError("split_dataset: eval_fraction must lie in (0, 1)");
  }
  const std::size_t n = dataset.size();
  auto n_eval = static_cast<std::size_t>(std::llround(eval_fraction * static_cast<double>(n)));
  n_eval = std::clamp<std::size_t>(n_eval, 1, n - 1);
  const std::vector<std::size_t> perm = epoch_permutation(n, seed, 0, 0, 0);
  std::vector<std::size_t> eval_idx(perm.begin(), perm.begin() + static_cast<long>(n_eval));
  std::vector<std::size_t> train_idx(perm.begin() + static_cast<long>(n_eval), perm.end());
  std::sort(eval_idx.begin(), eval_idx.end());
  std::sort(train_idx.begin(), train_idx.end());
  return {dataset.subset(train_idx), dataset.subset(eval_idx)};
}

// ---- batching ----------------------------------------------------------------------

std::vector<std::size_t> epoch_permutation(std::size_t n, std::uint64_t seed,
                                           std::size_t stream, std::size_t epoch,
                                           std::size_t cycle) {
  std::vector<std::size_t> perm(n);
  for (std::size_t i = 0; i < n; ++i) perm[i] = i;
  Rng rng(derive_seed(seed, "shuffle", {stream, epoch, cycle}));
  for (std::size_t i = n; i > 1; --i) {
    std::swap(perm[i - 1], perm[rng.below(i)]);
  }
  return perm;
}

std::vector<Batch> batches(const DomainDataset& dataset, const BatchPlan& plan) {
  const std::size_t sizes[] = {dataset.size()};
  std::vector<Batch> out;
  for (StepIndices& step : paired_batch_indices(sizes, plan)) {
    Batch b;
    b.indices = std::move(step[0]);
    b.features = dataset.gather(b.indices);
    if (dataset.labeled()) b.labels = dataset.gather_labels(b.indices);
    out.push_back(std::move(b));
  }
  return out;
}

std::vector<StepIndices> paired_batch_indices(std::span<const std::size_t> sizes,
                                              const BatchPlan& plan) {
  if (plan.batch_size == 0) throw ConfigError("batch plan: batch_size must be positive");
  if (sizes.empty()) return {};
  for (std::size_t s : sizes) {
    if (s == 0) throw ConfigError("batch plan: empty dataset");
  }
  const std::size_t longest = *std::max_element(sizes.begin(), sizes.end());
  const std::size_t steps = (longest + plan.batch_size - 1) / plan.batch_size;

  std::vector<StepIndices> out(steps, StepIndices(sizes.size()));
  for (std::size_t stream = 0; stream < sizes.size(); ++stream) {
    const std::size_t n = sizes[stream];
    std::size_t cycle = 0, pos = 0;
    std::vector<std::size_t> perm = epoch_permutation(n, plan.seed, stream, plan.epoch, cycle);
    for (std::size_t step = 0; step < steps; ++step) {
      const std::size_t want = std::min(plan.batch_size, longest - step * plan.batch_size);
      auto& dst = out[step][stream];
      dst.reserve(want);
      while (dst.size() < want) {
        if (pos == n) {
          perm = epoch_permutation(n, plan.seed, stream, plan.epoch, ++cycle);
          pos = 0;
        }
        dst.push_back(perm[pos++]);
      }
    }
  }
  return out;
}

}  // namespace kdda
