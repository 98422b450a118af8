#include "sthfl/wire.hpp"

#include <bit>
#include <cstring>
#include <istream>
#include <iterator>
#include <ostream>

#include <fmt/format.h>

#include "sthfl/error.hpp"

namespace sthfl {

namespace {

constexpr std::uint8_t kMagic[4] = {'S', 'T', 'H', 'M'};
constexpr std::uint8_t kLogMagic[4] = {'S', 'T', 'H', 'L'};

class Writer {
 public:
  void u8(std::uint8_t v) { out_.push_back(v); }
  void u16(std::uint16_t v) { put(v, 2); }
  void u32(std::uint32_t v) { put(v, 4); }
  void i32(std::int32_t v) { put(static_cast<std::uint32_t>(v), 4); }
  void i64(std::int64_t v) { put(static_cast<std::uint64_t>(v), 8); }
  void f64(double v) { put(std::bit_cast<std::uint64_t>(v), 8); }
  void raw(std::span<const std::uint8_t> bytes) { out_.insert(out_.end(), bytes.begin(), bytes.end()); }
  Bytes take() { return std::move(out_); }

 private:
  void put(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  Bytes out_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::uint8_t u8() { return static_cast<std::uint8_t>(get(1)); }
  std::uint16_t u16() { return static_cast<std::uint16_t>(get(2)); }
  std::uint32_t u32() { return static_cast<std::uint32_t>(get(4)); }
  std::int32_t i32() { return static_cast<std::int32_t>(static_cast<std::uint32_t>(get(4))); }
  std::int64_t i64() { return static_cast<std::int64_t>(get(8)); }
  double f64() { return std::bit_cast<double>(get(8)); }
  void skip(std::size_t n) {
    need(n);
    pos_ += n;
  }
  bool done() const noexcept { return pos_ == bytes_.size(); }
  // Guards element counts read from the payload before allocating.
  void need_items(std::uint64_t count, std::uint64_t item_size) const {
    if (item_size != 0 && count > (bytes_.size() - pos_) / item_size) {
      throw ProtocolError("payload truncated");
    }
  }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw ProtocolError("payload truncated");
  }
  std::uint64_t get(int n) {
    need(static_cast<std::size_t>(n));
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(bytes_[pos_ + static_cast<std::size_t>(i)]) << (8 * i);
    pos_ += static_cast<std::size_t>(n);
    return v;
  }

  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

void write_header(Writer& w, MessageKind kind, int round, int stage, int client) {
  w.raw(kMagic);
  w.u16(kWireVersion);
  w.u8(static_cast<std::uint8_t>(kind));
  w.i32(round);
  w.i32(stage);
  w.i32(client);
}

struct Header {
  MessageKind kind;
  int round;
  int stage;
  int client;
};

Header read_header(Reader& r) {
  for (std::uint8_t expected : kMagic) {
    if (r.u8() != expected) throw ProtocolError("bad message magic");
  }
  if (auto v = r.u16(); v != kWireVersion) {
    throw ProtocolError(fmt::format("unsupported wire version {}", v));
  }
  Header h{};
  auto kind = r.u8();
  if (kind != 1 && kind != 2) throw ProtocolError(fmt::format("unknown message kind {}", kind));
  h.kind = static_cast<MessageKind>(kind);
  h.round = r.i32();
  h.stage = r.i32();
  h.client = r.i32();
  return h;
}

void write_layer(Writer& w, SectionTag tag, const Layer& layer) {
  w.u8(static_cast<std::uint8_t>(tag));
  w.u32(static_cast<std::uint32_t>(layer.weight.rows()));
  w.u32(static_cast<std::uint32_t>(layer.weight.cols()));
  for (double v : layer.weight.values()) w.f64(v);
  w.u32(static_cast<std::uint32_t>(layer.bias.size()));
  for (double v : layer.bias) w.f64(v);
}

Layer read_layer(Reader& r) {
  const std::uint32_t rows = r.u32();
  const std::uint32_t cols = r.u32();
  r.need_items(static_cast<std::uint64_t>(rows) * cols, 8);
  Layer layer{Matrix(rows, cols), {}};
  for (double& v : layer.weight.values()) v = r.f64();
  const std::uint32_t n = r.u32();
  if (n != rows) throw ProtocolError("layer bias length disagrees with weight rows");
  r.need_items(n, 8);
  layer.bias.resize(n);
  for (double& v : layer.bias) v = r.f64();
  return layer;
}

void write_prototypes(Writer& w, const PrototypeMap& protos) {
  w.u8(static_cast<std::uint8_t>(SectionTag::kPrototypes));
  const std::size_t dim = protos.empty() ? 0 : protos.begin()->second.size();
  w.u32(static_cast<std::uint32_t>(protos.size()));
  w.u32(static_cast<std::uint32_t>(dim));
  for (const auto& [cls, v] : protos) {
    if (v.size() != dim) throw ProtocolError("prototypes of unequal dimension");
    w.i32(cls);
    for (double x : v) w.f64(x);
  }
}

PrototypeMap read_prototypes(Reader& r) {
  const std::uint32_t count = r.u32();
  const std::uint32_t dim = r.u32();
  r.need_items(count, 4 + 8ull * dim);
  PrototypeMap out;
  for (std::uint32_t i = 0; i < count; ++i) {
    int cls = r.i32();
    Vec v(dim);
    for (double& x : v) x = r.f64();
    if (!out.emplace(cls, std::move(v)).second) throw ProtocolError("duplicate prototype class");
  }
  return out;
}

void write_counts(Writer& w, const ClassCounts& counts) {
  w.u8(static_cast<std::uint8_t>(SectionTag::kClassCounts));
  w.u32(static_cast<std::uint32_t>(counts.size()));
  for (const auto& [cls, n] : counts) {
    w.i32(cls);
    w.i64(n);
  }
}

ClassCounts read_counts(Reader& r) {
  const std::uint32_t count = r.u32();
  r.need_items(count, 12);
  ClassCounts out;
  for (std::uint32_t i = 0; i < count; ++i) {
    int cls = r.i32();
    out[cls] = r.i64();
  }
  return out;
}

void skip_section(Reader& r, SectionTag tag) {
  switch (tag) {
    case SectionTag::kRep:
    case SectionTag::kHead:
      (void)read_layer(r);
      return;
    case SectionTag::kPrototypes:
      (void)read_prototypes(r);
      return;
    case SectionTag::kClassCounts:
      (void)read_counts(r);
      return;
    case SectionTag::kEnd:
      return;
  }
  throw ProtocolError("unknown section tag");
}

SectionTag read_tag(Reader& r) {
  auto t = r.u8();
  if (t > static_cast<std::uint8_t>(SectionTag::kClassCounts)) {
    throw ProtocolError(fmt::format("unknown section tag {}", t));
  }
  return static_cast<SectionTag>(t);
}

}  // namespace

Bytes encode(const BroadcastMessage& msg) {
  Writer w;
  write_header(w, MessageKind::kBroadcast, msg.round, msg.stage, -1);
  write_layer(w, SectionTag::kRep, msg.theta);
  if (msg.head) write_layer(w, SectionTag::kHead, *msg.head);
  write_prototypes(w, msg.global_protos);
  w.u8(static_cast<std::uint8_t>(SectionTag::kEnd));
  return w.take();
}

Bytes encode(const UploadMessage& msg) {
  Writer w;
  write_header(w, MessageKind::kUpload, msg.round, msg.stage, msg.client_id);
  write_layer(w, SectionTag::kRep, msg.rep);
  if (msg.head) write_layer(w, SectionTag::kHead, *msg.head);
  write_prototypes(w, msg.prototypes);
  write_counts(w, msg.class_counts);
  w.u8(static_cast<std::uint8_t>(SectionTag::kEnd));
  return w.take();
}

BroadcastMessage decode_broadcast(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  Header h = read_header(r);
  if (h.kind != MessageKind::kBroadcast) throw ProtocolError("expected a broadcast message");
  BroadcastMessage msg;
  msg.round = h.round;
  msg.stage = h.stage;
  bool have_rep = false;
  for (SectionTag tag = read_tag(r); tag != SectionTag::kEnd; tag = read_tag(r)) {
    switch (tag) {
      case SectionTag::kRep:
        msg.theta = read_layer(r);
        have_rep = true;
        break;
      case SectionTag::kHead:
        msg.head = read_layer(r);
        break;
      case SectionTag::kPrototypes:
        msg.global_protos = read_prototypes(r);
        break;
      default:
        throw ProtocolError("unexpected section in broadcast");
    }
  }
  if (!have_rep) throw ProtocolError("broadcast without shared layer");
  if (!r.done()) throw ProtocolError("trailing bytes after broadcast");
  return msg;
}

UploadMessage decode_upload(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  Header h = read_header(r);
  if (h.kind != MessageKind::kUpload) throw ProtocolError("expected an upload message");
  UploadMessage msg;
  msg.round = h.round;
  msg.stage = h.stage;
  msg.client_id = h.client;
  bool have_rep = false;
  for (SectionTag tag = read_tag(r); tag != SectionTag::kEnd; tag = read_tag(r)) {
    switch (tag) {
      case SectionTag::kRep:
        msg.rep = read_layer(r);
        have_rep = true;
        break;
      case SectionTag::kHead:
        msg.head = read_layer(r);
        break;
      case SectionTag::kPrototypes:
        msg.prototypes = read_prototypes(r);
        break;
      case SectionTag::kClassCounts:
        msg.class_counts = read_counts(r);
        break;
      default:
        throw ProtocolError("unexpected section in upload");
    }
  }
  if (!have_rep) throw ProtocolError("upload without shared layer");
  if (!r.done()) throw ProtocolError("trailing bytes after upload");
  return msg;
}

std::vector<SectionTag> section_tags(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  (void)read_header(r);
  std::vector<SectionTag> tags;
  for (SectionTag tag = read_tag(r); tag != SectionTag::kEnd; tag = read_tag(r)) {
    tags.push_back(tag);
    skip_section(r, tag);
  }
  return tags;
}

void MessageLog::record(Direction direction, Bytes payload) {
  messages_.push_back({direction, std::move(payload)});
}

void MessageLog::write(std::ostream& out) const {
  Writer w;
  w.raw(kLogMagic);
  w.u16(kWireVersion);
  w.i64(static_cast<std::int64_t>(messages_.size()));
  Bytes header = w.take();
  out.write(reinterpret_cast<const char*>(header.data()), static_cast<std::streamsize>(header.size()));
  for (const auto& m : messages_) {
    Writer mw;
    mw.u8(static_cast<std::uint8_t>(m.direction));
    mw.u32(static_cast<std::uint32_t>(m.payload.size()));
    Bytes prefix = mw.take();
    out.write(reinterpret_cast<const char*>(prefix.data()), static_cast<std::streamsize>(prefix.size()));
    out.write(reinterpret_cast<const char*>(m.payload.data()), static_cast<std::streamsize>(m.payload.size()));
  }
  if (!out) throw IoError("failed writing message log");
}

MessageLog MessageLog::read(std::istream& in) {
  Bytes all((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  Reader r(all);
  for (std::uint8_t expected : kLogMagic) {
    if (r.u8() != expected) throw ProtocolError("bad message log magic");
  }
  if (r.u16() != kWireVersion) throw ProtocolError("unsupported message log version");
  const auto count = static_cast<std::uint64_t>(r.i64());
  r.need_items(count, 5);
  MessageLog log;
  std::size_t offset = 4 + 2 + 8;
  for (std::uint64_t i = 0; i < count; ++i) {
    auto dir = r.u8();
    if (dir > 1) throw ProtocolError("bad message direction");
    const std::uint32_t len = r.u32();
    offset += 5;
    r.skip(len);
    log.record(static_cast<Direction>(dir),
               Bytes(all.begin() + static_cast<long>(offset), all.begin() + static_cast<long>(offset + len)));
    offset += len;
  }
  if (!r.done()) throw ProtocolError("trailing bytes in message log");
  return log;
}

}  // namespace sthfl
