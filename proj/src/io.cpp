#include "s4t/io.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <sstream>

#include "s4t/error.hpp"

namespace s4t {

namespace {

constexpr char kMagic[4] = {'S', '4', 'T', 'T'};
constexpr std::uint8_t kVersion = 1;

void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v & 0xff));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xff));
}

std::uint32_t get_u32(std::span<const std::uint8_t> b, std::size_t at) {
  return static_cast<std::uint32_t>(b[at]) | (static_cast<std::uint32_t>(b[at + 1]) << 8) |
         (static_cast<std::uint32_t>(b[at + 2]) << 16) | (static_cast<std::uint32_t>(b[at + 3]) << 24);
}

void need(std::span<const std::uint8_t> bytes, std::size_t offset, std::size_t count, const char* what) {
  if (offset + count > bytes.size()) {
    throw FormatError(std::string("truncated ") + what + " at byte offset " + std::to_string(offset) +
                      ": expected " + std::to_string(offset + count) + " bytes, file has " +
                      std::to_string(bytes.size()));
  }
}

// Netpbm header: magic, width, height, maxval, then exactly one whitespace byte.
struct PnmHeader {
  std::size_t width = 0;
  std::size_t height = 0;
  unsigned maxval = 0;
  std::size_t data_offset = 0;
};

PnmHeader parse_pnm_header(std::span<const std::uint8_t> bytes, const char* magic, const std::string& name) {
  if (bytes.size() < 2 || bytes[0] != magic[0] || bytes[1] != magic[1]) {
    throw FormatError(name + ": bad magic at byte offset 0, expected " + magic);
  }
  std::size_t pos = 2;
  auto skip_space = [&] {
    while (pos < bytes.size()) {
      const char c = static_cast<char>(bytes[pos]);
      if (c == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (c == ' ' || c == '\t' || c == '\n' || c == '\r') {
        ++pos;
      } else {
        break;
      }
    }
  };
  auto read_number = [&](const char* field) -> std::size_t {
    skip_space();
    const std::size_t start = pos;
    std::size_t v = 0;
    while (pos < bytes.size() && bytes[pos] >= '0' && bytes[pos] <= '9') {
      v = v * 10 + (bytes[pos] - '0');
      if (v > (1u << 24)) throw FormatError(name + ": " + field + " too large at byte offset " + std::to_string(start));
      ++pos;
    }
    if (pos == start) {
      throw FormatError(name + ": expected " + field + " at byte offset " + std::to_string(start));
    }
    return v;
  };
  PnmHeader h;
  h.width = read_number("width");
  h.height = read_number("height");
  h.maxval = static_cast<unsigned>(read_number("maxval"));
  if (h.width == 0 || h.height == 0) throw FormatError(name + ": zero image dimension");
  if (h.maxval == 0 || h.maxval > 255) {
    throw FormatError(name + ": unsupported maxval " + std::to_string(h.maxval) + " (must be 1..255)");
  }
  if (pos >= bytes.size()) {
    throw FormatError(name + ": truncated header at byte offset " + std::to_string(pos));
  }
  ++pos;  // single whitespace separator
  h.data_offset = pos;
  return h;
}

std::string pnm_header(const char* magic, std::size_t w, std::size_t h, unsigned maxval) {
  return std::string(magic) + "\n" + std::to_string(w) + " " + std::to_string(h) + "\n" + std::to_string(maxval) +
         "\n";
}

std::vector<std::uint8_t> with_header(const std::string& header, std::size_t payload) {
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.reserve(header.size() + payload);
  return out;
}

std::uint8_t quantize(float v) {
  const float c = std::clamp(v, 0.0f, 1.0f);
  return static_cast<std::uint8_t>(std::lround(c * 255.0f));
}

}  // namespace

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return bytes;
}

void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("write failed for " + path.string());
}

std::vector<std::uint8_t> encode_tensor(const Tensor& t) {
  if (t.rank() > 255) throw FormatError("tensor rank exceeds 255");
  std::vector<std::uint8_t> out(kMagic, kMagic + 4);
  out.push_back(kVersion);
  out.push_back(static_cast<std::uint8_t>(t.rank()));
  for (std::size_t d : t.shape()) {
    if (d > UINT32_MAX) throw FormatError("tensor dimension exceeds u32");
    put_u32(out, static_cast<std::uint32_t>(d));
  }
  out.reserve(out.size() + 4 * t.numel());
  for (float v : t.data()) put_u32(out, std::bit_cast<std::uint32_t>(v));
  return out;
}

Tensor decode_tensor(std::span<const std::uint8_t> bytes, std::size_t& offset) {
  need(bytes, offset, 6, "tensor header");
  if (!std::equal(kMagic, kMagic + 4, bytes.begin() + static_cast<std::ptrdiff_t>(offset))) {
    throw FormatError("bad tensor magic at byte offset " + std::to_string(offset) + ", expected \"S4TT\"");
  }
  const std::uint8_t version = bytes[offset + 4];
  if (version != kVersion) {
    throw FormatError("unsupported tensor version " + std::to_string(version) + " at byte offset " +
                      std::to_string(offset + 4));
  }
  const std::size_t rank = bytes[offset + 5];
  offset += 6;
  need(bytes, offset, 4 * rank, "tensor dims");
  Shape shape(rank);
  std::size_t count = 1;
  for (std::size_t i = 0; i < rank; ++i) {
    shape[i] = get_u32(bytes, offset + 4 * i);
    count *= shape[i];
    if (count > (std::size_t{1} << 34)) {
      throw FormatError("implausible tensor size at byte offset " + std::to_string(offset + 4 * i));
    }
  }
  offset += 4 * rank;
  need(bytes, offset, 4 * count, "tensor payload");
  std::vector<float> data(count);
  for (std::size_t i = 0; i < count; ++i) data[i] = std::bit_cast<float>(get_u32(bytes, offset + 4 * i));
  offset += 4 * count;
  return Tensor(std::move(shape), std::move(data));
}

void save_tensor(const std::filesystem::path& path, const Tensor& t) { write_file_bytes(path, encode_tensor(t)); }

Tensor load_tensor(const std::filesystem::path& path) {
  const std::vector<std::uint8_t> bytes = read_file_bytes(path);
  std::size_t offset = 0;
  Tensor t = decode_tensor(bytes, offset);
  if (offset != bytes.size()) {
    throw FormatError(path.string() + ": trailing bytes after tensor at byte offset " + std::to_string(offset));
  }
  return t;
}

void save_named_tensors(const std::filesystem::path& path, std::span<const NamedTensor> entries) {
  std::vector<std::uint8_t> out;
  for (const NamedTensor& e : entries) {
    if (e.name.size() > UINT16_MAX) throw FormatError("entry name too long: " + e.name);
    put_u16(out, static_cast<std::uint16_t>(e.name.size()));
    out.insert(out.end(), e.name.begin(), e.name.end());
    const std::vector<std::uint8_t> body = encode_tensor(e.tensor);
    out.insert(out.end(), body.begin(), body.end());
  }
  write_file_bytes(path, out);
}

std::vector<NamedTensor> load_named_tensors(const std::filesystem::path& path) {
  const std::vector<std::uint8_t> bytes = read_file_bytes(path);
  std::vector<NamedTensor> out;
  std::size_t offset = 0;
  try {
    while (offset < bytes.size()) {
      need(bytes, offset, 2, "entry name length");
      const std::size_t len = bytes[offset] | (static_cast<std::size_t>(bytes[offset + 1]) << 8);
      offset += 2;
      need(bytes, offset, len, "entry name");
      std::string name(bytes.begin() + static_cast<std::ptrdiff_t>(offset),
                       bytes.begin() + static_cast<std::ptrdiff_t>(offset + len));
      offset += len;
      out.push_back({std::move(name), decode_tensor(bytes, offset)});
    }
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  return out;
}

void write_ppm(const std::filesystem::path& path, const Tensor& image) {
  if (image.rank() != 3 || image.dim(0) != 3) throw ShapeError("write_ppm: expected 3×H×W, got " + shape_str(image.shape()));
  const std::size_t H = image.dim(1), W = image.dim(2), plane = H * W;
  std::vector<std::uint8_t> out = with_header(pnm_header("P6", W, H, 255), 3 * plane);
  for (std::size_t i = 0; i < plane; ++i)
    for (std::size_t c = 0; c < 3; ++c) out.push_back(quantize(image[c * plane + i]));
  write_file_bytes(path, out);
}

Tensor read_ppm(const std::filesystem::path& path) {
  const std::vector<std::uint8_t> bytes = read_file_bytes(path);
  const PnmHeader h = parse_pnm_header(bytes, "P6", path.string());
  if (h.maxval != 255) throw FormatError(path.string() + ": PPM maxval must be 255, got " + std::to_string(h.maxval));
  const std::size_t plane = h.width * h.height;
  need(bytes, h.data_offset, 3 * plane, (path.string() + " pixel data").c_str());
  Tensor image({3, h.height, h.width});
  for (std::size_t i = 0; i < plane; ++i)
    for (std::size_t c = 0; c < 3; ++c) image[c * plane + i] = static_cast<float>(bytes[h.data_offset + 3 * i + c]) / 255.0f;
  return image;
}

void write_label_pgm(const std::filesystem::path& path, const LabelMap& labels, std::size_t num_classes) {
  if (num_classes < 2 || num_classes > 256) throw FormatError("label PGM needs 2..256 classes");
  std::vector<std::uint8_t> out =
      with_header(pnm_header("P5", labels.width, labels.height, static_cast<unsigned>(num_classes - 1)), labels.size());
  for (Label l : labels.labels) {
    if (l < 0 || static_cast<std::size_t>(l) >= num_classes) {
      throw FormatError("label " + std::to_string(l) + " outside [0, " + std::to_string(num_classes) + ")");
    }
    out.push_back(static_cast<std::uint8_t>(l));
  }
  write_file_bytes(path, out);
}

LabelMap read_label_pgm(const std::filesystem::path& path, std::size_t num_classes) {
  const std::vector<std::uint8_t> bytes = read_file_bytes(path);
  const PnmHeader h = parse_pnm_header(bytes, "P5", path.string());
  if (h.maxval + 1 != num_classes) {
    throw FormatError(path.string() + ": label maxval " + std::to_string(h.maxval) + " does not match " +
                      std::to_string(num_classes) + " classes (expected maxval " + std::to_string(num_classes - 1) +
                      ")");
  }
  const std::size_t plane = h.width * h.height;
  need(bytes, h.data_offset, plane, (path.string() + " label data").c_str());
  LabelMap labels(h.height, h.width);
  for (std::size_t i = 0; i < plane; ++i) {
    const std::uint8_t v = bytes[h.data_offset + i];
    if (v > h.maxval) {
      throw FormatError(path.string() + ": label " + std::to_string(v) + " exceeds maxval at byte offset " +
                        std::to_string(h.data_offset + i));
    }
    labels.labels[i] = v;
  }
  return labels;
}

void write_mask_pgm(const std::filesystem::path& path, const BinaryMap& mask) {
  std::vector<std::uint8_t> out = with_header(pnm_header("P5", mask.width, mask.height, 255), mask.size());
  for (std::uint8_t v : mask.values) out.push_back(v ? 255 : 0);
  write_file_bytes(path, out);
}

BinaryMap read_mask_pgm(const std::filesystem::path& path) {
  const std::vector<std::uint8_t> bytes = read_file_bytes(path);
  const PnmHeader h = parse_pnm_header(bytes, "P5", path.string());
  if (h.maxval != 255) throw FormatError(path.string() + ": mask maxval must be 255");
  const std::size_t plane = h.width * h.height;
  need(bytes, h.data_offset, plane, (path.string() + " mask data").c_str());
  BinaryMap mask(h.height, h.width);
  for (std::size_t i = 0; i < plane; ++i) {
    const std::uint8_t v = bytes[h.data_offset + i];
    if (v != 0 && v != 255) {
      throw FormatError(path.string() + ": mask value " + std::to_string(v) + " at byte offset " +
                        std::to_string(h.data_offset + i) + " is neither 0 nor 255");
    }
    mask.values[i] = v ? 1 : 0;
  }
  return mask;
}

void write_label_ppm(const std::filesystem::path& path, const LabelMap& labels,
                     std::span<const std::array<float, 3>> palette) {
  const std::size_t plane = labels.size();
  Tensor image({3, labels.height, labels.width});
  for (std::size_t i = 0; i < plane; ++i) {
    const Label l = labels.labels[i];
    if (l < 0 || static_cast<std::size_t>(l) >= palette.size()) throw FormatError("label outside palette");
    for (std::size_t c = 0; c < 3; ++c) image[c * plane + i] = palette[static_cast<std::size_t>(l)][c];
  }
  write_ppm(path, image);
}

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open manifest " + path.string());
  const std::filesystem::path base = path.parent_path();
  auto resolve = [&base](const std::string& p) {
    std::filesystem::path fp(p);
    return fp.is_absolute() ? fp : base / fp;
  };
  std::vector<ManifestEntry> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    const std::size_t tab = line.find('\t');
    ManifestEntry e;
    if (tab == std::string::npos) {
      e.image = resolve(line);
    } else {
      e.image = resolve(line.substr(0, tab));
      const std::string label = line.substr(tab + 1);
      if (label.find('\t') != std::string::npos) {
        throw FormatError(path.string() + ": line " + std::to_string(line_no) + " has more than two fields");
      }
      if (!label.empty()) e.label = resolve(label);
    }
    out.push_back(std::move(e));
  }
  return out;
}

void write_manifest(const std::filesystem::path& path, std::span<const ManifestEntry> entries) {
  const std::filesystem::path base = path.parent_path();
  auto rel = [&base](const std::filesystem::path& p) {
    if (base.empty()) return p.generic_string();
    const std::filesystem::path r = p.lexically_relative(base);
    return (r.empty() ? p : r).generic_string();
  };
  std::string text;
  for (const ManifestEntry& e : entries) {
    text += rel(e.image);
    if (e.label) text += "\t" + rel(*e.label);
    text += "\n";
  }
  write_file_bytes(path, std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

}  // namespace s4t
