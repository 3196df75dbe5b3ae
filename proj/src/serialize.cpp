#include "microtorch/serialize.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <memory>

#include <nlohmann/json.hpp>

#include "kernel_utils.hpp"
#include "microtorch/ops.hpp"

namespace microtorch {

static_assert(std::endian::native == std::endian::little, "MTNS payloads are little-endian");

namespace {

constexpr char kMagic[4] = {'M', 'T', 'N', 'S'};

void read_exact(std::istream& in, void* dst, std::size_t n, const char* what) {
  in.read(static_cast<char*>(dst), static_cast<std::streamsize>(n));
  if (static_cast<std::size_t>(in.gcount()) != n) {
    fail(ErrorCode::IoError, std::string("truncated MTNS stream while reading ") + what);
  }
}

std::string file_name_for(std::size_t index) { return "t" + std::to_string(index) + ".mtns"; }

}  // namespace

void write_tensor(std::ostream& out, const Tensor& t) {
  MT_CHECK(t.defined(), ErrorCode::InvalidArgument, "cannot serialize an undefined tensor");
  MT_CHECK(t.rank() <= 255, ErrorCode::InvalidArgument, "rank exceeds MTNS limit");
  Tensor c = contiguous(t);
  Executor::global().synchronize();
  out.write(kMagic, 4);
  const auto code = static_cast<std::uint8_t>(c.dtype());
  const auto rank = static_cast<std::uint8_t>(c.rank());
  out.put(static_cast<char>(code));
  out.put(static_cast<char>(rank));
  for (std::int64_t d : c.shape()) {
    const auto dim = static_cast<std::uint64_t>(d);
    out.write(reinterpret_cast<const char*>(&dim), sizeof dim);
  }
  const std::size_t nbytes = static_cast<std::size_t>(c.numel()) * size_bytes(c.dtype());
  out.write(reinterpret_cast<const char*>(c.raw_data()), static_cast<std::streamsize>(nbytes));
  if (!out) fail(ErrorCode::IoError, "failed writing MTNS stream");
}

Tensor read_tensor(std::istream& in) {
  char magic[4];
  read_exact(in, magic, 4, "magic");
  MT_CHECK(std::memcmp(magic, kMagic, 4) == 0, ErrorCode::IoError, "bad MTNS magic");
  std::uint8_t header[2];
  read_exact(in, header, 2, "header");
  const DType dtype = dtype_from_code(header[0]);
  Shape shape(header[1]);
  for (auto& d : shape) {
    std::uint64_t dim = 0;
    read_exact(in, &dim, sizeof dim, "dims");
    d = static_cast<std::int64_t>(dim);
  }
  const std::size_t nbytes = static_cast<std::size_t>(numel(shape)) * size_bytes(dtype);
  auto payload = std::make_shared<std::vector<std::byte>>(nbytes);
  read_exact(in, payload->data(), nbytes, "payload");

  Tensor out = empty(shape, dtype);
  std::byte* dst = out.raw_data();
  detail::launch("load", {out}, [dst, payload] { std::memcpy(dst, payload->data(), payload->size()); });
  return out;
}

void save_tensor(const std::filesystem::path& path, const Tensor& t) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::IoError, "cannot open " + path.string() + " for writing");
  write_tensor(out, t);
}

Tensor load_tensor(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::IoError, "cannot open " + path.string());
  return read_tensor(in);
}

void save_checkpoint(const std::filesystem::path& dir, const NamedTensors& tensors) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) fail(ErrorCode::IoError, "cannot create " + dir.string() + ": " + ec.message());
  nlohmann::ordered_json manifest = nlohmann::ordered_json::object();
  std::size_t index = 0;
  for (const auto& [name, tensor] : tensors) {
    const std::string file = file_name_for(index++);
    save_tensor(dir / file, tensor);
    manifest[name] = file;
  }
  std::ofstream out(dir / "manifest.json");
  if (!out) fail(ErrorCode::IoError, "cannot write manifest in " + dir.string());
  out << manifest.dump(2) << '\n';
}

NamedTensors load_checkpoint(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) fail(ErrorCode::IoError, "no manifest.json in " + dir.string());
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::IoError, std::string("malformed manifest: ") + e.what());
  }
  NamedTensors out;
  for (const auto& [name, file] : manifest.items()) {
    out.emplace(name, load_tensor(dir / file.get<std::string>()));
  }
  return out;
}

}  // namespace microtorch
