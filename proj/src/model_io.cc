#include "prescribe/model_io.h"

#include <charconv>
#include <sstream>

#include "prescribe/error.h"
#include "prescribe/textio.h"

namespace prescribe::orf {
namespace {

constexpr std::string_view kMagic = "prescribe-orf-model";

// Line-oriented reader over whitespace-separated tokens.
class Reader {
 public:
  explicit Reader(std::string_view text) : text_(text) {}

  std::string_view line() {
    if (pos_ >= text_.size()) fail("unexpected end of file");
    const std::size_t end = text_.find('\n', pos_);
    const std::size_t stop = end == std::string_view::npos ? text_.size() : end;
    std::string_view out = text_.substr(pos_, stop - pos_);
    pos_ = stop + 1;
    ++line_no_;
    return out;
  }
  std::string_view raw(std::size_t bytes) {
    if (pos_ + bytes > text_.size()) fail("truncated block");
    std::string_view out = text_.substr(pos_, bytes);
    pos_ += bytes;
    return out;
  }
  std::vector<std::string> tokens(std::string_view expect_tag, std::size_t min_count = 0) {
    auto parts = split(line(), ' ');
    if (parts.empty() || parts[0] != expect_tag)
      fail("expected '" + std::string(expect_tag) + "'");
    if (parts.size() < min_count + 1) fail("too few fields for '" + std::string(expect_tag) + "'");
    return parts;
  }
  [[noreturn]] void fail(const std::string& what) const {
    throw ModelFormatError("line " + std::to_string(line_no_) + ": " + what);
  }
  double num(const std::string& s) const {
    auto v = parse_double(s);
    if (!v) fail("bad number '" + s + "'");
    return *v;
  }
  std::int64_t integer(const std::string& s) const {
    auto v = parse_int(s);
    if (!v) fail("bad integer '" + s + "'");
    return *v;
  }
  std::uint64_t hex(const std::string& s) const {
    std::uint64_t v = 0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v, 16);
    if (ec != std::errc() || p != s.data() + s.size()) fail("bad hex '" + s + "'");
    return v;
  }

 private:
  std::string_view text_;
  std::size_t pos_ = 0;
  std::size_t line_no_ = 0;
};

void write_linear(std::ostringstream& out, std::string_view tag, const LinearModel& m) {
  out << tag << ' ' << m.coef.size() << ' ' << format_double(m.intercept);
  for (Eigen::Index j = 0; j < m.coef.size(); ++j) out << ' ' << format_double(m.coef(j));
  out << '\n';
}

LinearModel read_linear(Reader& r, std::string_view tag) {
  auto parts = r.tokens(tag, 2);
  const auto p = r.integer(parts[1]);
  if (p < 0 || parts.size() != static_cast<std::size_t>(p) + 3) r.fail("coefficient count mismatch");
  LinearModel m;
  m.intercept = r.num(parts[2]);
  m.coef.resize(p);
  for (std::int64_t j = 0; j < p; ++j) m.coef(j) = r.num(parts[3 + j]);
  return m;
}

void write_rows(std::ostringstream& out, char tag, const std::vector<std::uint32_t>& rows) {
  out << tag << ' ' << rows.size();
  for (auto v : rows) out << ' ' << v;
  out << '\n';
}

std::vector<std::uint32_t> read_rows(Reader& r, std::string_view tag, std::size_t n_train) {
  auto parts = r.tokens(tag, 1);
  const auto count = r.integer(parts[1]);
  if (count < 0 || parts.size() != static_cast<std::size_t>(count) + 2) r.fail("row count mismatch");
  std::vector<std::uint32_t> rows(static_cast<std::size_t>(count));
  for (std::int64_t i = 0; i < count; ++i) {
    const auto v = r.integer(parts[2 + i]);
    if (v < 0 || static_cast<std::size_t>(v) >= n_train) r.fail("row index out of range");
    rows[static_cast<std::size_t>(i)] = static_cast<std::uint32_t>(v);
  }
  return rows;
}

}  // namespace

std::string serialize_model(const OrfModel& model) {
  std::ostringstream out;
  const auto& hp = model.hyperparams;
  out << kMagic << '\n';
  out << "format_version " << kModelFormatVersion << '\n';
  out << "hyperparams " << hp.n_trees << ' ' << hp.min_leaf_size << ' ' << hp.max_depth << ' '
      << format_double(hp.subsample_ratio) << ' ' << format_double(hp.lambda_reg) << ' '
      << (hp.honest ? 1 : 0) << ' ' << hp.bootstrap_groups << ' ' << hp.rng_seed << ' '
      << hp.max_thresholds << ' ' << format_double(hp.propensity_clip) << '\n';
  out << "dictionary_hash " << hex64(model.dictionary_hash) << '\n';
  out << "training_fingerprint " << hex64(model.training_fingerprint) << '\n';
  out << "features " << model.feature_names.size() << '\n';
  for (const auto& name : model.feature_names) out << name << '\n';
  write_linear(out, "propensity", model.nuisance.propensity);
  write_linear(out, "outcome", model.nuisance.outcome);
  out << "propensity_warning " << (model.nuisance.propensity_warning ? 1 : 0) << '\n';

  const auto& tr = model.train;
  out << "train " << tr.x.rows() << ' ' << tr.x.cols() << '\n';
  for (Eigen::Index i = 0; i < tr.x.rows(); ++i) {
    out << format_double(tr.t(i)) << ' ' << format_double(tr.y(i));
    for (Eigen::Index j = 0; j < tr.x.cols(); ++j) out << ' ' << format_double(tr.x(i, j));
    out << '\n';
  }
  out << "trees " << model.trees.size() << '\n';
  for (const auto& tree : model.trees) {
    out << "tree " << tree.nodes.size() << ' ' << tree.leaves.size() << '\n';
    for (const auto& nd : tree.nodes)
      out << "n " << nd.feature << ' ' << format_double(nd.threshold) << ' ' << nd.left << ' '
          << nd.right << ' ' << nd.leaf << '\n';
    for (const auto& leaf : tree.leaves) write_rows(out, 'l', leaf);
    write_rows(out, 's', tree.split_half);
    write_rows(out, 'e', tree.estimate_half);
  }
  out << "dictionary " << model.dictionary.size() << '\n' << model.dictionary << '\n';
  out << "end\n";
  return out.str();
}

OrfModel parse_model(std::string_view text) {
  Reader r(text);
  if (r.line() != kMagic) throw ModelFormatError("not a model file");
  {
    auto parts = r.tokens("format_version", 1);
    if (r.integer(parts[1]) != kModelFormatVersion)
      r.fail("unsupported format version " + parts[1]);
  }
  OrfModel m;
  {
    auto p = r.tokens("hyperparams", 10);
    auto& hp = m.hyperparams;
    hp.n_trees = static_cast<int>(r.integer(p[1]));
    hp.min_leaf_size = static_cast<int>(r.integer(p[2]));
    hp.max_depth = static_cast<int>(r.integer(p[3]));
    hp.subsample_ratio = r.num(p[4]);
    hp.lambda_reg = r.num(p[5]);
    hp.honest = r.integer(p[6]) != 0;
    hp.bootstrap_groups = static_cast<int>(r.integer(p[7]));
    {
      std::uint64_t seed = 0;
      auto [ptr, ec] = std::from_chars(p[8].data(), p[8].data() + p[8].size(), seed);
      if (ec != std::errc() || ptr != p[8].data() + p[8].size()) r.fail("bad seed");
      hp.rng_seed = seed;
    }
    hp.max_thresholds = static_cast<int>(r.integer(p[9]));
    hp.propensity_clip = r.num(p[10]);
    try {
      hp.validate();
    } catch (const ConfigError& e) {
      r.fail(e.what());
    }
  }
  m.dictionary_hash = r.hex(r.tokens("dictionary_hash", 1)[1]);
  m.training_fingerprint = r.hex(r.tokens("training_fingerprint", 1)[1]);
  {
    const auto count = r.integer(r.tokens("features", 1)[1]);
    if (count < 0) r.fail("negative feature count");
    for (std::int64_t i = 0; i < count; ++i) m.feature_names.emplace_back(r.line());
  }
  m.nuisance.propensity = read_linear(r, "propensity");
  m.nuisance.outcome = read_linear(r, "outcome");
  m.nuisance.propensity_warning = r.integer(r.tokens("propensity_warning", 1)[1]) != 0;

  auto dims = r.tokens("train", 2);
  const auto rows = r.integer(dims[1]);
  const auto cols = r.integer(dims[2]);
  if (rows < 0 || cols < 0) r.fail("bad training dimensions");
  if (static_cast<std::size_t>(cols) != m.feature_names.size() ||
      m.nuisance.propensity.coef.size() != cols || m.nuisance.outcome.coef.size() != cols)
    r.fail("column count disagrees with feature list");
  m.train.x.resize(rows, cols);
  m.train.t.resize(rows);
  m.train.y.resize(rows);
  for (std::int64_t i = 0; i < rows; ++i) {
    auto parts = split(r.line(), ' ');
    if (parts.size() != static_cast<std::size_t>(cols) + 2) r.fail("training row width mismatch");
    m.train.t(i) = r.num(parts[0]);
    m.train.y(i) = r.num(parts[1]);
    for (std::int64_t j = 0; j < cols; ++j) m.train.x(i, j) = r.num(parts[2 + j]);
  }
  const auto n_train = static_cast<std::size_t>(rows);

  const auto n_trees = r.integer(r.tokens("trees", 1)[1]);
  if (n_trees != m.hyperparams.n_trees) r.fail("tree count disagrees with hyperparams");
  m.trees.resize(static_cast<std::size_t>(n_trees));
  for (auto& tree : m.trees) {
    auto hdr = r.tokens("tree", 2);
    const auto n_nodes = r.integer(hdr[1]);
    const auto n_leaves = r.integer(hdr[2]);
    if (n_nodes < 1 || n_leaves < 1) r.fail("empty tree");
    tree.nodes.resize(static_cast<std::size_t>(n_nodes));
    for (auto& nd : tree.nodes) {
      auto p = r.tokens("n", 5);
      nd.feature = static_cast<int>(r.integer(p[1]));
      nd.threshold = r.num(p[2]);
      nd.left = static_cast<int>(r.integer(p[3]));
      nd.right = static_cast<int>(r.integer(p[4]));
      nd.leaf = static_cast<int>(r.integer(p[5]));
      const bool internal = nd.feature >= 0;
      if (internal && (nd.feature >= cols || nd.left <= 0 || nd.right <= 0 || nd.left >= n_nodes ||
                       nd.right >= n_nodes))
        r.fail("bad split node");
      if (!internal && (nd.leaf < 0 || nd.leaf >= n_leaves)) r.fail("bad leaf node");
    }
    tree.leaves.resize(static_cast<std::size_t>(n_leaves));
    for (auto& leaf : tree.leaves) {
      leaf = read_rows(r, "l", n_train);
      if (leaf.empty()) r.fail("empty leaf");
    }
    tree.split_half = read_rows(r, "s", n_train);
    tree.estimate_half = read_rows(r, "e", n_train);
  }
  {
    const auto bytes = r.integer(r.tokens("dictionary", 1)[1]);
    if (bytes < 0) r.fail("bad dictionary size");
    m.dictionary = std::string(r.raw(static_cast<std::size_t>(bytes)));
    r.line();  // newline after the block
  }
  if (r.line() != "end") r.fail("missing end marker");
  if (fingerprint(m.train) != m.training_fingerprint)
    throw ModelFormatError("training data fingerprint mismatch");
  return m;
}

void save_model(const OrfModel& model, const std::filesystem::path& path) {
  write_file(path, serialize_model(model));
}

OrfModel load_model(const std::filesystem::path& path,
                    std::optional<std::uint64_t> expected_dictionary_hash) {
  OrfModel m = parse_model(read_file(path));
  if (expected_dictionary_hash && *expected_dictionary_hash != m.dictionary_hash)
    throw ModelFormatError("model was trained with dictionary " + hex64(m.dictionary_hash) +
                           ", encoder has " + hex64(*expected_dictionary_hash));
  return m;
}

}  // namespace prescribe::orf
