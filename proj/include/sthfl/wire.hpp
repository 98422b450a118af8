#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <vector>

#include "sthfl/kernels.hpp"
#include "sthfl/prototypes.hpp"

namespace sthfl {

// Binary payloads exchanged between the server and clients. Layout (all
// integers little-endian, doubles as IEEE-754 binary64 bit patterns):
//
//   magic "STHM" | u16 version | u8 kind | i32 round | i32 stage | i32 client
//   then tagged sections, each `u8 tag` followed by its body, ending with tag 0.
//
// See docs/wire_format.md for the section bodies.
inline constexpr std::uint16_t kWireVersion = 1;

enum class MessageKind : std::uint8_t { kBroadcast = 1, kUpload = 2 };

enum class SectionTag : std::uint8_t {
  kEnd = 0,
  kRep = 1,
  kHead = 2,
  kPrototypes = 3,
  kClassCounts = 4,
};

struct BroadcastMessage {
  int round = 0;
  int stage = 0;
  Layer theta;
  std::optional<Layer> head;  // only for full-model baselines
  PrototypeMap global_protos;

  bool operator==(const BroadcastMessage&) const = default;
};

struct UploadMessage {
  int round = 0;
  int stage = 0;
  int client_id = 0;
  Layer rep;
  std::optional<Layer> head;  // only for full-model baselines
  PrototypeMap prototypes;
  ClassCounts class_counts;

  bool operator==(const UploadMessage&) const = default;
};

using Bytes = std::vector<std::uint8_t>;

Bytes encode(const BroadcastMessage& msg);
Bytes encode(const UploadMessage& msg);
BroadcastMessage decode_broadcast(std::span<const std::uint8_t> bytes);
UploadMessage decode_upload(std::span<const std::uint8_t> bytes);

// Section tags present in a payload, in order, without decoding bodies beyond
// what is needed to skip them.
std::vector<SectionTag> section_tags(std::span<const std::uint8_t> bytes);

enum class Direction : std::uint8_t { kServerToClient = 0, kClientToServer = 1 };

struct LoggedMessage {
  Direction direction;
  Bytes payload;
};

// Append-only record of every payload that crossed the client/server boundary.
class MessageLog {
 public:
  void record(Direction direction, Bytes payload);
  const std::vector<LoggedMessage>& messages() const noexcept { return messages_; }
  std::size_t size() const noexcept { return messages_.size(); }

  // File layout: "STHL" | u16 version | u64 count | per message: u8 direction,
  // u32 length, payload bytes.
  void write(std::ostream& out) const;
  static MessageLog read(std::istream& in);

 private:
  std::vector<LoggedMessage> messages_;
};

}  // namespace sthfl
