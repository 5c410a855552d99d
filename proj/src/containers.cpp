#include "gnh/containers.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <utility>
#include <vector>

#include "gnh/errors.hpp"

static_assert(std::endian::native == std::endian::little,
              "container payloads are little-endian; big-endian hosts need byte swaps");

namespace gnh {
namespace {

class HeaderParser {
 public:
  HeaderParser(std::istream& in, std::string path) : in_(in), path_(std::move(path)) {}

  // next header line as a token stream; stops accepting after "end"
  std::istringstream next(const std::string& expected_key) {
    std::string line = raw_line();
    std::istringstream ss(line);
    std::string key;
    ss >> key;
    if (key != expected_key) {
      fail("expected '" + expected_key + "' but found '" + key + "'");
    }
    return ss;
  }

  void expect_end() {
    std::string line = raw_line();
    if (line != "end") fail("expected 'end' but found '" + line + "'");
  }

  template <typename T>
  T value(const std::string& key) {
    auto ss = next(key);
    T v{};
    if (!(ss >> v)) fail("could not parse value for '" + key + "'");
    return v;
  }

  std::uint64_t hex_value(const std::string& key) {
    auto ss = next(key);
    std::uint64_t v = 0;
    if (!(ss >> std::hex >> v)) fail("could not parse hex value for '" + key + "'");
    return v;
  }

  [[noreturn]] void fail(const std::string& what) const {
    std::ostringstream msg;
    msg << path_ << ": " << what << " (header line " << line_no_ << ")";
    throw FormatError(msg.str());
  }

  int line_no() const { return line_no_; }

 private:
  std::string raw_line() {
    std::string line;
    if (!std::getline(in_, line)) fail("header ended prematurely");
    ++line_no_;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    return line;
  }

  std::istream& in_;
  std::string path_;
  int line_no_ = 0;
};

void check_magic(HeaderParser& hp, const std::string& magic, int version) {
  auto ss = hp.next(magic);
  int v = -1;
  if (!(ss >> v)) hp.fail("missing version after magic '" + magic + "'");
  if (v != version) {
    hp.fail("unsupported " + magic + " version " + std::to_string(v) + ", expected " +
            std::to_string(version));
  }
}

std::ifstream open_input(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError(path + ": cannot open for reading");
  return in;
}

std::ofstream open_output(const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ResourceError(path + ": cannot open for writing");
  return out;
}

template <typename Scalar>
void write_payload(std::ostream& out, const Scalar* data, std::uint64_t count) {
  out.write(reinterpret_cast<const char*>(data),
            static_cast<std::streamsize>(count * sizeof(Scalar)));
}

template <typename Scalar>
void read_payload(std::istream& in, const std::string& path, Scalar* data,
                  std::uint64_t count, const std::string& what) {
  const std::streamsize want = static_cast<std::streamsize>(count * sizeof(Scalar));
  const std::streampos at = in.tellg();
  in.read(reinterpret_cast<char*>(data), want);
  if (in.gcount() != want) {
    std::ostringstream msg;
    msg << path << ": payload truncated while reading " << what << " at byte offset "
        << static_cast<long long>(at) << " (wanted " << want << " bytes, got " << in.gcount()
        << ")";
    throw FormatError(msg.str());
  }
}

void finish_write(std::ofstream& out, const std::string& path) {
  out.flush();
  if (!out) throw ResourceError(path + ": write failed (disk full or permissions?)");
}

std::string hex16(std::uint64_t v) {
  std::ostringstream ss;
  ss << std::hex << std::setfill('0') << std::setw(16) << v;
  return ss.str();
}

// shortest text that round-trips a double exactly
std::string full_double(double v) {
  std::ostringstream ss;
  ss << std::setprecision(17) << v;
  return ss.str();
}

}  // namespace

std::uint64_t fnv1a64(const void* data, std::size_t len) {
  const auto* bytes = static_cast<const unsigned char*>(data);
  std::uint64_t h = 14695981039346656037ull;
  for (std::size_t i = 0; i < len; ++i) {
    h ^= bytes[i];
    h *= 1099511628211ull;
  }
  return h;
}

std::uint64_t fnv1a64_file(const std::string& path) {
  std::ifstream in = open_input(path);
  std::uint64_t h = 14695981039346656037ull;
  char buf[1 << 16];
  while (in) {
    in.read(buf, sizeof(buf));
    const std::streamsize got = in.gcount();
    for (std::streamsize i = 0; i < got; ++i) {
      h ^= static_cast<unsigned char>(buf[i]);
      h *= 1099511628211ull;
    }
  }
  return h;
}

void save_network(const std::string& path, const MlpNetwork& net) {
  std::ofstream out = open_output(path);
  out << "GNHNET 1\n";
  out << "layers " << net.depth() << "\n";
  out << "dims " << net.input_dim();
  for (int l = 0; l < net.depth(); ++l) out << ' ' << net.rows(l);
  out << "\n";
  out << "activations";
  for (int l = 0; l < net.depth(); ++l) out << ' ' << to_string(net.activation(l));
  out << "\n";
  out << "loss " << to_string(net.loss()) << "\n";
  out << "bias " << to_string(net.bias_mode()) << "\n";
  out << "end\n";
  for (int l = 0; l < net.depth(); ++l) {
    write_payload(out, net.weight(l).data(), static_cast<std::uint64_t>(net.weight(l).size()));
  }
  finish_write(out, path);
}

MlpNetwork load_network(const std::string& path) {
  std::ifstream in = open_input(path);
  HeaderParser hp(in, path);
  check_magic(hp, "GNHNET", 1);
  const int layers = hp.value<int>("layers");
  if (layers < 1 || layers > 1000) hp.fail("implausible layer count");
  auto dims_ss = hp.next("dims");
  std::vector<int> dims(static_cast<std::size_t>(layers) + 1);
  for (auto& d : dims) {
    if (!(dims_ss >> d) || d < 1) hp.fail("dims needs " + std::to_string(layers + 1) +
                                          " positive integers");
  }
  auto act_ss = hp.next("activations");
  std::vector<Activation> acts(static_cast<std::size_t>(layers));
  for (auto& a : acts) {
    std::string tok;
    if (!(act_ss >> tok)) hp.fail("activations needs one token per layer");
    a = activation_from_string(tok);
  }
  const Loss loss = loss_from_string(hp.value<std::string>("loss"));
  const BiasMode bias = bias_mode_from_string(hp.value<std::string>("bias"));
  hp.expect_end();

  const int extra = bias == BiasMode::augmented ? 1 : 0;
  std::vector<Eigen::MatrixXd> weights(static_cast<std::size_t>(layers));
  for (int l = 0; l < layers; ++l) {
    auto& w = weights[static_cast<std::size_t>(l)];
    w.resize(dims[static_cast<std::size_t>(l) + 1], dims[static_cast<std::size_t>(l)] + extra);
    read_payload(in, path, w.data(), static_cast<std::uint64_t>(w.size()),
                 "weights of layer " + std::to_string(l));
  }
  return MlpNetwork(std::move(weights), std::move(acts), loss, bias);
}

void save_batch(const std::string& path, const Batch& batch) {
  std::ofstream out = open_output(path);
  out << "GNHBATCH 1\n";
  out << "points " << batch.inputs.cols() << "\n";
  out << "input-dim " << batch.inputs.rows() << "\n";
  out << "label-dim " << batch.labels.rows() << "\n";
  out << "end\n";
  write_payload(out, batch.inputs.data(), static_cast<std::uint64_t>(batch.inputs.size()));
  write_payload(out, batch.labels.data(), static_cast<std::uint64_t>(batch.labels.size()));
  finish_write(out, path);
}

Batch load_batch(const std::string& path) {
  std::ifstream in = open_input(path);
  HeaderParser hp(in, path);
  check_magic(hp, "GNHBATCH", 1);
  const std::int64_t n = hp.value<std::int64_t>("points");
  const std::int64_t din = hp.value<std::int64_t>("input-dim");
  const std::int64_t dlab = hp.value<std::int64_t>("label-dim");
  if (n < 1 || din < 1 || dlab < 1) hp.fail("points and dimensions must be positive");
  hp.expect_end();

  Batch batch;
  batch.inputs.resize(din, n);
  batch.labels.resize(dlab, n);
  read_payload(in, path, batch.inputs.data(), static_cast<std::uint64_t>(batch.inputs.size()),
               "inputs");
  read_payload(in, path, batch.labels.data(), static_cast<std::uint64_t>(batch.labels.size()),
               "labels");
  return batch;
}

void save_precomp(const std::string& path, const GnhPrecomp& pre, const PrecompStamp& stamp) {
  std::ofstream out = open_output(path);
  const int L = pre.layers();
  out << "GNHPRE 1\n";
  out << "net-hash " << hex16(stamp.net_hash) << "\n";
  out << "batch-hash " << hex16(stamp.batch_hash) << "\n";
  out << "points " << pre.points() << "\n";
  out << "out-dim " << pre.out_dim() << "\n";
  out << "precision " << (pre.precision() == StoragePrecision::f32 ? "f32" : "f64") << "\n";
  out << "layers " << L << "\n";
  out << "dims";
  for (int l = 0; l < L; ++l) out << ' ' << pre.layout().rows(l);
  out << "\n";
  out << "widths";
  for (int l = 0; l < L; ++l) out << ' ' << pre.layout().cols(l);
  out << "\n";
  out << "end\n";

  for (int l = 0; l < L; ++l) {
    if (pre.precision() == StoragePrecision::f64) {
      const Eigen::MatrixXd& t = pre.tensor_f64(l);
      write_payload(out, t.data(), static_cast<std::uint64_t>(t.size()));
    } else {
      const Eigen::MatrixXf& t = pre.tensor_f32(l);
      write_payload(out, t.data(), static_cast<std::uint64_t>(t.size()));
    }
    const Eigen::MatrixXd& norms = pre.column_norms(l);
    write_payload(out, norms.data(), static_cast<std::uint64_t>(norms.size()));
    const Eigen::MatrixXd& acts = pre.input_activation(l);
    write_payload(out, acts.data(), static_cast<std::uint64_t>(acts.size()));
  }
  finish_write(out, path);
}

GnhPrecomp load_precomp(const std::string& path, const std::optional<PrecompStamp>& expect,
                        PrecompStamp* stamp_out) {
  std::ifstream in = open_input(path);
  HeaderParser hp(in, path);
  check_magic(hp, "GNHPRE", 1);
  PrecompStamp stamp;
  stamp.net_hash = hp.hex_value("net-hash");
  stamp.batch_hash = hp.hex_value("batch-hash");
  const int n = hp.value<int>("points");
  const int d_out = hp.value<int>("out-dim");
  const std::string prec_tok = hp.value<std::string>("precision");
  if (prec_tok != "f64" && prec_tok != "f32") hp.fail("precision must be f64 or f32");
  const StoragePrecision prec =
      prec_tok == "f32" ? StoragePrecision::f32 : StoragePrecision::f64;
  const int L = hp.value<int>("layers");
  if (L < 1 || L > 1000) hp.fail("implausible layer count");
  auto dims_ss = hp.next("dims");
  std::vector<int> dims(static_cast<std::size_t>(L));
  for (auto& d : dims)
    if (!(dims_ss >> d) || d < 1) hp.fail("dims needs one positive integer per layer");
  auto widths_ss = hp.next("widths");
  std::vector<int> widths(static_cast<std::size_t>(L));
  for (auto& w : widths)
    if (!(widths_ss >> w) || w < 1) hp.fail("widths needs one positive integer per layer");
  hp.expect_end();

  if (stamp_out != nullptr) *stamp_out = stamp;
  if (expect.has_value()) {
    if (expect->net_hash != stamp.net_hash) {
      throw FormatError(path + ": cached tables were built from a different network (hash " +
                        hex16(stamp.net_hash) + ", expected " + hex16(expect->net_hash) + ")");
    }
    if (expect->batch_hash != stamp.batch_hash) {
      throw FormatError(path + ": cached tables were built from a different batch (hash " +
                        hex16(stamp.batch_hash) + ", expected " + hex16(expect->batch_hash) +
                        ")");
    }
  }

  std::vector<Eigen::MatrixXd> c64;
  std::vector<Eigen::MatrixXf> c32;
  std::vector<Eigen::MatrixXd> norms(static_cast<std::size_t>(L));
  std::vector<Eigen::MatrixXd> acts(static_cast<std::size_t>(L));
  if (prec == StoragePrecision::f64)
    c64.resize(static_cast<std::size_t>(L));
  else
    c32.resize(static_cast<std::size_t>(L));
  for (int l = 0; l < L; ++l) {
    const std::size_t sl = static_cast<std::size_t>(l);
    const Eigen::Index tensor_cols = static_cast<Eigen::Index>(n) * dims[sl];
    if (prec == StoragePrecision::f64) {
      c64[sl].resize(d_out, tensor_cols);
      read_payload(in, path, c64[sl].data(), static_cast<std::uint64_t>(c64[sl].size()),
                   "tensor of layer " + std::to_string(l));
    } else {
      c32[sl].resize(d_out, tensor_cols);
      read_payload(in, path, c32[sl].data(), static_cast<std::uint64_t>(c32[sl].size()),
                   "tensor of layer " + std::to_string(l));
    }
    norms[sl].resize(dims[sl], n);
    read_payload(in, path, norms[sl].data(), static_cast<std::uint64_t>(norms[sl].size()),
                 "norms of layer " + std::to_string(l));
    acts[sl].resize(widths[sl], n);
    read_payload(in, path, acts[sl].data(), static_cast<std::uint64_t>(acts[sl].size()),
                 "activations of layer " + std::to_string(l));
  }

  std::vector<int> rows = dims;
  ParamLayout layout(std::move(rows), std::move(widths));
  return GnhPrecomp(std::move(layout), std::move(dims), n, d_out, prec, std::move(c64),
                    std::move(c32), std::move(norms), std::move(acts));
}

void save_hmatrix(const std::string& path, const HMatrix& hm) {
  std::ofstream out = open_output(path);
  const IndexTree& tree = hm.tree();
  out << "GNHHMAT 1\n";
  out << "size " << hm.size() << "\n";
  out << "lambda " << full_double(hm.lambda()) << "\n";
  out << "nodes " << tree.node_count() << "\n";
  for (int id = 0; id < tree.node_count(); ++id) {
    const TreeNode& nd = tree.node(id);
    const std::int64_t rank = tree.is_leaf(id) ? -1 : hm.node_factors(id).u.cols();
    out << "node " << id << ' ' << nd.start << ' ' << nd.size << ' ' << nd.left << ' '
        << nd.right << ' ' << nd.level << ' ' << rank << "\n";
  }
  out << "end\n";

  write_payload(out, tree.perm().data(), static_cast<std::uint64_t>(tree.perm().size()));
  for (int id = 0; id < tree.node_count(); ++id) {
    if (tree.is_leaf(id)) {
      const Eigen::MatrixXd& block = hm.leaf_block(id);
      write_payload(out, block.data(), static_cast<std::uint64_t>(block.size()));
    } else {
      const HMatrix::NodeFactors& f = hm.node_factors(id);
      write_payload(out, f.u.data(), static_cast<std::uint64_t>(f.u.size()));
      write_payload(out, f.v.data(), static_cast<std::uint64_t>(f.v.size()));
    }
  }
  finish_write(out, path);
}

HMatrix load_hmatrix(const std::string& path) {
  std::ifstream in = open_input(path);
  HeaderParser hp(in, path);
  check_magic(hp, "GNHHMAT", 1);
  const std::int64_t n = hp.value<std::int64_t>("size");
  if (n < 1) hp.fail("size must be positive");
  const double lambda = hp.value<double>("lambda");
  const int node_count = hp.value<int>("nodes");
  if (node_count < 1) hp.fail("node count must be positive");

  std::vector<TreeNode> nodes(static_cast<std::size_t>(node_count));
  std::vector<std::int64_t> ranks(static_cast<std::size_t>(node_count));
  for (int i = 0; i < node_count; ++i) {
    auto ss = hp.next("node");
    int id = -1;
    TreeNode nd;
    std::int64_t rank = -1;
    if (!(ss >> id >> nd.start >> nd.size >> nd.left >> nd.right >> nd.level >> rank)) {
      hp.fail("node line needs 7 integer fields");
    }
    if (id != i) hp.fail("node lines must appear in id order");
    if (nd.size < 1 || nd.start < 0 || nd.start + nd.size > n) hp.fail("node range out of bounds");
    if ((nd.left < 0) != (nd.right < 0)) hp.fail("node must have zero or two children");
    nodes[static_cast<std::size_t>(i)] = nd;
    ranks[static_cast<std::size_t>(i)] = rank;
  }
  hp.expect_end();
  for (int i = 0; i < node_count; ++i) {
    const TreeNode& nd = nodes[static_cast<std::size_t>(i)];
    if (nd.left >= 0) {
      if (nd.left >= node_count || nd.right >= node_count) {
        throw FormatError(path + ": node " + std::to_string(i) + " references missing children");
      }
      nodes[static_cast<std::size_t>(nd.left)].parent = i;
      nodes[static_cast<std::size_t>(nd.right)].parent = i;
    }
  }

  std::vector<std::int64_t> perm(static_cast<std::size_t>(n));
  read_payload(in, path, perm.data(), static_cast<std::uint64_t>(perm.size()), "permutation");
  std::vector<Eigen::MatrixXd> leaf_blocks(static_cast<std::size_t>(node_count));
  std::vector<HMatrix::NodeFactors> factors(static_cast<std::size_t>(node_count));
  for (int id = 0; id < node_count; ++id) {
    const TreeNode& nd = nodes[static_cast<std::size_t>(id)];
    if (nd.left < 0) {
      auto& block = leaf_blocks[static_cast<std::size_t>(id)];
      block.resize(nd.size, nd.size);
      read_payload(in, path, block.data(), static_cast<std::uint64_t>(block.size()),
                   "leaf block of node " + std::to_string(id));
    } else {
      const std::int64_t rank = ranks[static_cast<std::size_t>(id)];
      if (rank < 0) throw FormatError(path + ": internal node " + std::to_string(id) +
                                      " carries a leaf rank marker");
      auto& f = factors[static_cast<std::size_t>(id)];
      f.u.resize(nodes[static_cast<std::size_t>(nd.left)].size, rank);
      f.v.resize(nodes[static_cast<std::size_t>(nd.right)].size, rank);
      read_payload(in, path, f.u.data(), static_cast<std::uint64_t>(f.u.size()),
                   "left factor of node " + std::to_string(id));
      read_payload(in, path, f.v.data(), static_cast<std::uint64_t>(f.v.size()),
                   "right factor of node " + std::to_string(id));
    }
  }

  IndexTree tree(std::move(perm), std::move(nodes));
  return HMatrix(std::move(tree), lambda, std::move(leaf_blocks), std::move(factors));
}

}  // namespace gnh
