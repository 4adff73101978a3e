#include "protofed/datagen.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>
#include <string>

namespace protofed {

DomainSpec DomainSpec::identity(int input_dim, double noise_sigma) {
  return DomainSpec{Mat::Identity(input_dim, input_dim), Vec::Ones(input_dim),
                    Vec::Zero(input_dim), noise_sigma};
}

void DomainSpec::validate() const {
  if (rotation.rows() != rotation.cols() || rotation.rows() != scale.size() ||
      scale.size() != bias.size()) {
    throw UsageError("DomainSpec: inconsistent dimensions");
  }
  if ((scale.array() <= 0.0).any()) throw UsageError("DomainSpec: scales must be positive");
  if (noise_sigma < 0.0) throw UsageError("DomainSpec: noise sigma must be nonnegative");
}

Mat make_class_anchors(int classes, int input_dim, double anchor_scale, Rng& rng) {
  Mat anchors(input_dim, classes);
  for (int k = 0; k < classes; ++k) {
    for (int i = 0; i < input_dim; ++i) anchors(i, k) = anchor_scale * rng.normal();
  }
  return anchors;
}

std::vector<DomainSpec> make_domain_specs(const SyntheticSpec& spec, Rng& rng) {
  const int n = spec.input_dim;
  std::vector<DomainSpec> specs;
  specs.reserve(static_cast<std::size_t>(spec.domains));
  for (int d = 0; d < spec.domains; ++d) {
    DomainSpec ds = DomainSpec::identity(n, spec.noise_sigma);
    // Product of n Givens rotations in random coordinate planes.
    for (int r = 0; r < n; ++r) {
      const auto i = static_cast<Eigen::Index>(rng.uniform_index(static_cast<std::uint64_t>(n)));
      auto j = static_cast<Eigen::Index>(rng.uniform_index(static_cast<std::uint64_t>(n - 1)));
      if (j >= i) ++j;
      const double angle = (2.0 * rng.uniform() - 1.0) * spec.max_rotation;
      Eigen::JacobiRotation<double> g(std::cos(angle), std::sin(angle));
      ds.rotation.applyOnTheLeft(i, j, g);
    }
    const double log_spread = std::log(spec.scale_spread);
    for (int i = 0; i < n; ++i) {
      ds.scale(i) = std::exp((2.0 * rng.uniform() - 1.0) * log_spread);
      ds.bias(i) = spec.bias_scale * rng.normal();
    }
    specs.push_back(std::move(ds));
  }
  return specs;
}

std::vector<std::vector<Sample>> make_domains(const Mat& anchors,
                                              const std::vector<DomainSpec>& specs, int per_class,
                                              Rng& rng) {
  if (anchors.cols() < 2) throw UsageError("make_domains: need at least two classes");
  if (per_class < 1) throw UsageError("make_domains: per_class must be positive");
  std::vector<std::vector<Sample>> out(specs.size());
  for (std::size_t d = 0; d < specs.size(); ++d) {
    const auto& ds = specs[d];
    ds.validate();
    if (ds.scale.size() != anchors.rows()) {
      throw UsageError("make_domains: domain spec dimension does not match anchors");
    }
    auto& samples = out[d];
    samples.reserve(static_cast<std::size_t>(per_class * anchors.cols()));
    for (int c = 0; c < per_class; ++c) {
      for (Eigen::Index k = 0; k < anchors.cols(); ++k) {
        Vec z(anchors.rows());
        for (Eigen::Index i = 0; i < z.size(); ++i) z(i) = anchors(i, k) + ds.noise_sigma * rng.normal();
        Vec x = ds.scale.cwiseProduct(ds.rotation * z) + ds.bias;
        samples.push_back(Sample{std::move(x), static_cast<int>(k), static_cast<int>(d)});
      }
    }
  }
  return out;
}

std::vector<std::vector<Sample>> make_domains(const SyntheticSpec& spec, Rng& rng) {
  if (spec.classes < 2) throw UsageError("make_domains: need at least two classes");
  if (spec.domains < 1) throw UsageError("make_domains: need at least one domain");
  if (spec.input_dim < 2) throw UsageError("make_domains: input_dim must be at least 2");
  const Mat anchors = make_class_anchors(spec.classes, spec.input_dim, spec.anchor_scale, rng);
  const auto specs = make_domain_specs(spec, rng);
  return make_domains(anchors, specs, spec.per_class, rng);
}

std::vector<std::vector<Sample>> make_domains(int classes, int domains, int input_dim,
                                              int per_class, Rng& rng) {
  SyntheticSpec spec;
  spec.classes = classes;
  spec.domains = domains;
  spec.input_dim = input_dim;
  spec.per_class = per_class;
  return make_domains(spec, rng);
}

int PartitionPlan::total_clients() const {
  return std::accumulate(clients_per_domain.begin(), clients_per_domain.end(), 0);
}

void PartitionPlan::validate(std::size_t domain_count) const {
  if (clients_per_domain.size() != domain_count) {
    throw ConfigError("partition: plan lists " + std::to_string(clients_per_domain.size()) +
                      " domains, data has " + std::to_string(domain_count));
  }
  for (int c : clients_per_domain) {
    if (c < 0) throw ConfigError("partition: negative client count");
  }
  if (total_clients() < 1) throw ConfigError("partition: no clients allocated");
  if (!(sampling_rate > 0.0 && sampling_rate <= 1.0)) {
    throw ConfigError("partition: sampling_rate must be in (0, 1]");
  }
  if (!(test_fraction >= 0.0 && test_fraction < 1.0)) {
    throw ConfigError("partition: test_fraction must be in [0, 1)");
  }
}

namespace {

void shuffle(std::vector<std::size_t>& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    const auto j = static_cast<std::size_t>(rng.uniform_index(i));
    std::swap(v[i - 1], v[j]);
  }
}

}  // namespace

Partition partition(const std::vector<std::vector<Sample>>& domain_data, const PartitionPlan& plan,
                    Rng& rng) {
  plan.validate(domain_data.size());
  Partition out;
  const std::size_t n_domains = domain_data.size();
  out.test_sets.resize(n_domains);
  out.test_indices.resize(n_domains);
  out.train_pool.resize(n_domains);
  for (std::size_t d = 0; d < n_domains; ++d) {
    std::vector<std::size_t> order(domain_data[d].size());
    std::iota(order.begin(), order.end(), 0);
    shuffle(order, rng);
    const auto n_test = static_cast<std::size_t>(
        std::floor(plan.test_fraction * static_cast<double>(order.size())));
    out.test_indices[d].assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_test));
    out.train_pool[d].assign(order.begin() + static_cast<std::ptrdiff_t>(n_test), order.end());
    for (auto i : out.test_indices[d]) out.test_sets[d].push_back(domain_data[d][i]);
  }

  std::vector<std::size_t> assignment;
  for (std::size_t d = 0; d < n_domains; ++d) {
    assignment.insert(assignment.end(), static_cast<std::size_t>(plan.clients_per_domain[d]), d);
  }
  shuffle(assignment, rng);

  for (std::size_t m = 0; m < assignment.size(); ++m) {
    const std::size_t d = assignment[m];
    std::vector<std::size_t> pool = out.train_pool[d];
    const auto take = static_cast<std::size_t>(
        std::floor(plan.sampling_rate * static_cast<double>(pool.size())));
    if (take == 0) {
      throw ConfigError("partition: client " + std::to_string(m) + " would receive no samples");
    }
    // Partial Fisher-Yates: the first `take` slots become the draw.
    for (std::size_t i = 0; i < take; ++i) {
      const auto j = i + static_cast<std::size_t>(rng.uniform_index(pool.size() - i));
      std::swap(pool[i], pool[j]);
    }
    ClientData client;
    client.client_id = static_cast<int>(m);
    client.domain = static_cast<int>(d);
    client.pool_indices.assign(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(take));
    for (auto i : client.pool_indices) client.samples.push_back(domain_data[d][i]);
    out.clients.push_back(std::move(client));
  }
  return out;
}

std::vector<std::vector<Sample>> group_by_domain(const std::vector<Sample>& samples,
                                                 int domain_count) {
  std::vector<std::vector<Sample>> out(static_cast<std::size_t>(domain_count));
  for (const auto& s : samples) {
    if (s.domain < 0 || s.domain >= domain_count) {
      throw IngestionError("domain " + std::to_string(s.domain) + " outside [0, " +
                           std::to_string(domain_count) + ")");
    }
    out[static_cast<std::size_t>(s.domain)].push_back(s);
  }
  return out;
}

void write_csv(const std::filesystem::path& path, const std::vector<Sample>& samples,
               std::string_view prefix) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IngestionError("cannot open " + path.string() + " for writing");
  const Eigen::Index dim = samples.empty() ? 0 : samples.front().x.size();
  for (Eigen::Index i = 0; i < dim; ++i) os << prefix << i << ',';
  os << "label,domain\n";
  char buf[32];
  for (const auto& s : samples) {
    if (s.x.size() != dim) throw UsageError("write_csv: samples differ in dimension");
    for (Eigen::Index i = 0; i < dim; ++i) {
      std::snprintf(buf, sizeof buf, "%.17g", s.x(i));
      os << buf << ',';
    }
    os << s.label << ',' << s.domain << '\n';
  }
  if (!os) throw IngestionError("write failed for " + path.string());
}

namespace {

std::vector<std::string_view> split_commas(std::string_view line) {
  std::vector<std::string_view> cells;
  std::size_t start = 0;
  for (;;) {
    const auto pos = line.find(',', start);
    cells.push_back(line.substr(start, pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return cells;
}

template <typename T>
bool parse_cell(std::string_view cell, T& out) {
  while (!cell.empty() && (cell.front() == ' ')) cell.remove_prefix(1);
  while (!cell.empty() && (cell.back() == ' ')) cell.remove_suffix(1);
  if (cell.empty()) return false;
  const auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), out);
  return ec == std::errc() && ptr == cell.data() + cell.size();
}

}  // namespace

std::vector<Sample> load_csv(const std::filesystem::path& path, const CsvSchema& schema) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IngestionError("cannot open " + path.string());
  std::string line;
  if (!std::getline(is, line)) throw IngestionError(path.string() + ": missing header");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const auto header = split_commas(line);
  if (header.size() < 3 || header[header.size() - 2] != "label" ||
      header[header.size() - 1] != "domain") {
    throw IngestionError(path.string() + ":1: header must end with label,domain");
  }
  const int dim = static_cast<int>(header.size()) - 2;
  if (schema.input_dim && *schema.input_dim != dim) {
    throw IngestionError(path.string() + ":1: expected " + std::to_string(*schema.input_dim) +
                         " feature columns, header has " + std::to_string(dim));
  }

  std::vector<Sample> samples;
  std::vector<std::string> problems;
  std::size_t line_no = 1;
  while (std::getline(is, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto cells = split_commas(line);
    auto fail = [&](const std::string& why) {
      problems.push_back("line " + std::to_string(line_no) + ": " + why);
    };
    if (cells.size() != header.size()) {
      fail("expected " + std::to_string(header.size()) + " columns, got " +
           std::to_string(cells.size()));
      continue;
    }
    Sample s;
    s.x.resize(dim);
    bool ok = true;
    for (int i = 0; i < dim && ok; ++i) {
      double v = 0.0;
      if (!parse_cell(cells[static_cast<std::size_t>(i)], v) || !std::isfinite(v)) {
        fail("non-numeric value in column " + std::to_string(i));
        ok = false;
      } else {
        s.x(i) = v;
      }
    }
    if (!ok) continue;
    if (!parse_cell(cells[static_cast<std::size_t>(dim)], s.label)) {
      fail("non-integer label");
      continue;
    }
    if (!parse_cell(cells[static_cast<std::size_t>(dim) + 1], s.domain)) {
      fail("non-integer domain");
      continue;
    }
    if (s.label < 0 || s.label >= schema.num_classes) {
      fail("label " + std::to_string(s.label) + " outside [0, " +
           std::to_string(schema.num_classes) + ")");
      continue;
    }
    if (s.domain < 0 || (schema.num_domains && s.domain >= *schema.num_domains)) {
      fail("domain " + std::to_string(s.domain) + " out of range");
      continue;
    }
    samples.push_back(std::move(s));
  }
  if (!problems.empty()) {
    std::ostringstream msg;
    msg << path.string() << ": " << problems.size() << " malformed row(s)";
    for (const auto& p : problems) msg << "\n  " << p;
    throw IngestionError(msg.str());
  }
  return samples;
}

}  // namespace protofed
