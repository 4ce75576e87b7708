#include <fstream>

#include "binary_io.h"
#include "codd/error.h"
#include "codd/hmm.h"

namespace codd {

namespace {
constexpr std::string_view kMagic = "CODDHMM1";
}

void write_hmm(std::ostream& out, const HmmParams& params) {
  detail::ByteWriter w;
  w.bytes(kMagic);
  w.u32(static_cast<std::uint32_t>(params.num_states()));
  w.u32(static_cast<std::uint32_t>(params.vocab_size()));
  for (double x : params.log_pi()) w.f64(x);
  for (double x : params.log_a()) w.f64(x);
  for (double x : params.log_b()) w.f64(x);
  w.flush_to(out);
}

HmmParams read_hmm(std::istream& in) {
  auto r = detail::ByteReader::from_stream(in);
  r.expect_magic(kMagic);
  const std::size_t n = r.u32();
  const std::size_t v = r.u32();
  if (n == 0 || v == 0) throw FormatError("HMM dimensions must be positive", r.offset());
  const std::size_t count = n + n * n + n * v;
  if (n > (1u << 16) || v > (1u << 24)) throw FormatError("HMM dimensions overflow", r.offset());
  r.require_bytes(count, 8, "HMM parameters");
  auto read_vec = [&](std::size_t k) {
    std::vector<double> x(k);
    for (double& d : x) d = r.f64();
    return x;
  };
  auto pi = read_vec(n);
  auto a = read_vec(n * n);
  auto b = read_vec(n * v);
  if (!r.at_end()) throw FormatError("trailing bytes after HMM parameters", r.offset());
  return HmmParams(n, v, std::move(pi), std::move(a), std::move(b));
}

void save_hmm(const std::filesystem::path& path, const HmmParams& params) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  write_hmm(out, params);
  if (!out) throw Error("failed writing " + path.string());
}

HmmParams load_hmm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  return read_hmm(in);
}

}  // namespace codd
