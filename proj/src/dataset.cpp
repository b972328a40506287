#include "selena/dataset.hpp"

#include "selena/io.hpp"
#include "selena/rng.hpp"

#include <algorithm>
#include <sstream>

namespace selena {

namespace {

bool is_binary(const Matrix& m) {
  return ((m.array() == 0.0) || (m.array() == 1.0)).all();
}

std::vector<Index> complement_of(const std::vector<Index>& chosen, Index n) {
  std::vector<char> in(static_cast<std::size_t>(n), 0);
  for (Index i : chosen) in[static_cast<std::size_t>(i)] = 1;
  std::vector<Index> out;
  out.reserve(static_cast<std::size_t>(n) - chosen.size());
  for (Index i = 0; i < n; ++i) {
    if (!in[static_cast<std::size_t>(i)]) out.push_back(i);
  }
  return out;
}

}  // namespace

Dataset generate_synthetic(int n_classes, int n_features, int n_per_class, double flip_noise,
                           std::uint64_t seed) {
  if (n_classes < 2) throw Error("generate_synthetic: need at least 2 classes");
  if (n_features < n_classes) {
    throw Error("generate_synthetic: n_features must be >= n_classes");
  }
  if (n_per_class < 1) throw Error("generate_synthetic: n_per_class must be positive");
  if (flip_noise < 0.0 || flip_noise > 0.5) {
    throw Error("generate_synthetic: flip_noise must lie in [0, 0.5]");
  }

  Rng rng(seed);
  Matrix prototypes(n_classes, n_features);
  for (int c = 0; c < n_classes; ++c) {
    for (int f = 0; f < n_features; ++f) prototypes(c, f) = rng.bernoulli(0.5) ? 1.0 : 0.0;
  }

  Dataset out;
  out.n_classes = n_classes;
  out.feature_kind = FeatureKind::kBinary;
  out.features.resize(static_cast<Index>(n_classes) * n_per_class, n_features);
  out.labels.resize(static_cast<std::size_t>(n_classes) * n_per_class);
  Index row = 0;
  for (int c = 0; c < n_classes; ++c) {
    for (int j = 0; j < n_per_class; ++j, ++row) {
      for (int f = 0; f < n_features; ++f) {
        const bool flip = rng.bernoulli(flip_noise);
        const bool bit = (prototypes(c, f) != 0.0) != flip;
        out.features(row, f) = bit ? 1.0 : 0.0;
      }
      out.labels[static_cast<std::size_t>(row)] = c;
    }
  }
  return out;
}

void save_csv(const Dataset& data, const std::filesystem::path& path) {
  std::ostringstream out;
  for (Index f = 0; f < data.d(); ++f) out << 'f' << f << ',';
  out << "label\n";
  for (Index i = 0; i < data.n(); ++i) {
    for (Index f = 0; f < data.d(); ++f) out << format_double(data.features(i, f)) << ',';
    out << data.labels[static_cast<std::size_t>(i)] << '\n';
  }
  atomic_write_file(path, out.str());
}

Dataset load_csv(const std::filesystem::path& path, int declared_classes) {
  const std::string text = read_file(path);
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw Error("load_csv: " + path.string() + " is empty");
  if (!line.empty() && line.back() == '\r') line.pop_back();

  std::vector<std::string> header;
  {
    std::istringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) header.push_back(cell);
  }
  if (header.empty() || header.back() != "label") {
    throw Error("load_csv: " + path.string() + " must end with a 'label' column");
  }
  const Index d = static_cast<Index>(header.size()) - 1;
  if (d < 1) throw Error("load_csv: " + path.string() + " has no feature columns");

  std::vector<double> values;
  std::vector<int> labels;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string cell;
    std::vector<std::string> cells;
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    if (static_cast<Index>(cells.size()) != d + 1) {
      std::ostringstream msg;
      msg << "load_csv: " << path.string() << ":" << line_no << ": expected " << (d + 1)
          << " columns, got " << cells.size();
      throw Error(msg.str());
    }
    for (Index f = 0; f < d; ++f) {
      try {
        values.push_back(parse_double(cells[static_cast<std::size_t>(f)]));
      } catch (const Error&) {
        std::ostringstream msg;
        msg << "load_csv: " << path.string() << ":" << line_no << ": bad value '"
            << cells[static_cast<std::size_t>(f)] << "'";
        throw Error(msg.str());
      }
    }
    const double lab = parse_double(cells.back());
    const int lab_i = static_cast<int>(lab);
    if (lab != static_cast<double>(lab_i) || lab_i < 0) {
      std::ostringstream msg;
      msg << "load_csv: " << path.string() << ":" << line_no << ": label must be a"
          << " non-negative integer";
      throw Error(msg.str());
    }
    labels.push_back(lab_i);
  }
  if (labels.empty()) throw Error("load_csv: " + path.string() + " has no data rows");

  Dataset out;
  const Index n = static_cast<Index>(labels.size());
  out.features.resize(n, d);
  for (Index i = 0; i < n; ++i) {
    for (Index f = 0; f < d; ++f) {
      out.features(i, f) = values[static_cast<std::size_t>(i * d + f)];
    }
  }
  out.labels = std::move(labels);
  const int max_label = *std::max_element(out.labels.begin(), out.labels.end());
  if (declared_classes < 0) {
    out.n_classes = max_label + 1;
  } else {
    if (max_label >= declared_classes) {
      std::ostringstream msg;
      msg << "load_csv: " << path.string() << ": label " << max_label << " exceeds declared "
          << declared_classes << " classes";
      throw Error(msg.str());
    }
    out.n_classes = declared_classes;
  }
  out.feature_kind = is_binary(out.features) ? FeatureKind::kBinary : FeatureKind::kReal;
  return out;
}

Dataset subset(const Dataset& data, const std::vector<Index>& rows) {
  Dataset out;
  out.n_classes = data.n_classes;
  out.feature_kind = data.feature_kind;
  out.features.resize(static_cast<Index>(rows.size()), data.d());
  out.labels.resize(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] < 0 || rows[i] >= data.n()) throw Error("subset: row index out of range");
    out.features.row(static_cast<Index>(i)) = data.features.row(rows[i]);
    out.labels[i] = data.labels[static_cast<std::size_t>(rows[i])];
  }
  return out;
}

std::pair<Dataset, Dataset> member_nonmember_split(const Dataset& all, Index n_members,
                                                   Index n_nonmembers, std::uint64_t seed) {
  if (n_members < 1 || n_nonmembers < 1) {
    throw Error("member_nonmember_split: both sides must be non-empty");
  }
  if (n_members + n_nonmembers > all.n()) {
    std::ostringstream msg;
    msg << "member_nonmember_split: need " << (n_members + n_nonmembers) << " rows, have "
        << all.n();
    throw Error(msg.str());
  }
  std::vector<Index> order(static_cast<std::size_t>(all.n()));
  for (Index i = 0; i < all.n(); ++i) order[static_cast<std::size_t>(i)] = i;
  Rng rng(seed);
  rng.shuffle(order);
  std::vector<Index> m(order.begin(), order.begin() + n_members);
  std::vector<Index> t(order.begin() + n_members, order.begin() + n_members + n_nonmembers);
  std::sort(m.begin(), m.end());
  std::sort(t.begin(), t.end());
  return {subset(all, m), subset(all, t)};
}

std::uint64_t dataset_fingerprint(const Dataset& data) {
  std::uint64_t h = mix64(static_cast<std::uint64_t>(data.n()) * 0x10001 +
                          static_cast<std::uint64_t>(data.d()));
  for (Index i = 0; i < data.n(); ++i) {
    for (Index f = 0; f < data.d(); ++f) {
      const std::int64_t v = std::llround(data.features(i, f) * 1e9);
      h = mix64(h ^ static_cast<std::uint64_t>(v));
    }
    h = mix64(h ^ static_cast<std::uint64_t>(data.labels[static_cast<std::size_t>(i)]));
  }
  return h;
}

EvalSplit make_eval_split(Dataset members, Dataset nonmembers, double knowledge_fraction,
                          std::uint64_t seed) {
  if (knowledge_fraction <= 0.0 || knowledge_fraction >= 1.0) {
    throw Error("make_eval_split: knowledge_fraction must lie in (0, 1)");
  }
  if (members.n() < 2 || nonmembers.n() < 2) {
    throw Error("make_eval_split: need at least 2 samples per side");
  }

  EvalSplit split;
  split.knowledge_fraction = knowledge_fraction;
  Rng rng(seed);

  auto pick_known = [&rng, knowledge_fraction](Index n) {
    const auto k = static_cast<std::size_t>(knowledge_fraction * static_cast<double>(n));
    auto sampled = rng.sample_without_replacement(static_cast<std::size_t>(n), k);
    std::vector<Index> out(sampled.begin(), sampled.end());
    std::sort(out.begin(), out.end());
    return out;
  };

  split.known_members = pick_known(members.n());
  split.known_nonmembers = pick_known(nonmembers.n());
  std::vector<Index> em = complement_of(split.known_members, members.n());
  std::vector<Index> en = complement_of(split.known_nonmembers, nonmembers.n());

  // Balance by down-sampling the larger side; preserves the 0.5 baseline.
  const std::size_t m = std::min(em.size(), en.size());
  if (em.size() > m) {
    rng.shuffle(em);
    em.resize(m);
    std::sort(em.begin(), em.end());
  }
  if (en.size() > m) {
    rng.shuffle(en);
    en.resize(m);
    std::sort(en.begin(), en.end());
  }
  if (m == 0) throw Error("make_eval_split: eval sets are empty");
  split.eval_members = std::move(em);
  split.eval_nonmembers = std::move(en);
  split.train = std::move(members);
  split.test = std::move(nonmembers);
  return split;
}

}  // namespace selena
