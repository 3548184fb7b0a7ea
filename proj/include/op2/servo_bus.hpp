#pragma once

// Dynamixel protocol 1.0 framing, MX-106 style register files and an
// emulated first-order servo.
//
//   FF FF id len instr params... chk     len = |params| + 2
//   chk = ~(id + len + instr + sum(params)) & 0xFF
//
// Status packets use the same framing with the error byte in place of the
// instruction.

#include "op2/common.hpp"
#include "op2/servo_spec.hpp"

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace op2::bus {

using Bytes = std::vector<std::uint8_t>;

inline constexpr std::uint8_t kBroadcastId = 254;
inline constexpr std::size_t kMaxParams = 250;

namespace instr {
inline constexpr std::uint8_t ping = 0x01;
inline constexpr std::uint8_t read = 0x02;
inline constexpr std::uint8_t write = 0x03;
inline constexpr std::uint8_t reg_write = 0x04;
inline constexpr std::uint8_t action = 0x05;
inline constexpr std::uint8_t reset = 0x06;
inline constexpr std::uint8_t sync_write = 0x83;
inline constexpr std::uint8_t bulk_read = 0x92;
}  // namespace instr

/// Status error bits.
namespace status {
inline constexpr std::uint8_t voltage = 0x01;
inline constexpr std::uint8_t angle_limit = 0x02;
inline constexpr std::uint8_t overheating = 0x04;
inline constexpr std::uint8_t range = 0x08;
inline constexpr std::uint8_t checksum = 0x10;
inline constexpr std::uint8_t overload = 0x20;
inline constexpr std::uint8_t instruction = 0x40;
}  // namespace status

struct Packet {
  std::uint8_t id = 0;
  std::uint8_t instruction = 0;  // error byte for status packets
  Bytes params;

  bool operator==(const Packet&) const = default;
};

class PacketError : public Error {
 public:
  using Error::Error;
};

/// Throws PacketError for more than 250 parameter bytes or id 255.
Bytes encode_packet(const Packet& p);

struct Decoded {
  Packet packet;
  std::size_t consumed = 0;  // bytes up to and including the checksum
};

/// The frame starting at `offset` failed its checksum (or carried an
/// impossible length byte). Resume decoding at `consumed`.
struct ChecksumError {
  std::size_t offset = 0;
  std::size_t consumed = 0;
};

/// At least `needed` more bytes are required. `consumed` bytes of leading
/// garbage may be dropped.
struct Incomplete {
  std::size_t needed = 0;
  std::size_t consumed = 0;
};

using DecodeResult = std::variant<Decoded, ChecksumError, Incomplete>;

/// Decodes the first frame in `bytes`, skipping anything before an FF FF
/// preamble. Never throws.
DecodeResult decode_packet(std::span<const std::uint8_t> bytes);

/// Decodes every complete frame; bad frames are counted and skipped.
struct StreamResult {
  std::vector<Packet> packets;
  std::size_t checksum_errors = 0;
  std::size_t trailing = 0;  // bytes left in an unfinished frame
};
StreamResult decode_stream(std::span<const std::uint8_t> bytes);

std::string to_hex(std::span<const std::uint8_t> bytes);
/// Parses whitespace separated hex byte pairs; throws PacketError.
Bytes from_hex(std::string_view text);

// ---------------------------------------------------------------------------
// Ticks

double ticks_to_rad(int ticks, int resolution = 4096);
/// Rounds to the nearest tick and clamps to [0, resolution - 1].
int rad_to_ticks(double rad, int resolution = 4096);

// ---------------------------------------------------------------------------
// Register file

namespace reg {
inline constexpr std::uint8_t model_number = 0;   // 2 B, RO
inline constexpr std::uint8_t firmware = 2;       // RO
inline constexpr std::uint8_t id = 3;
inline constexpr std::uint8_t baud_rate = 4;
inline constexpr std::uint8_t return_delay = 5;
inline constexpr std::uint8_t cw_angle_limit = 6;   // 2 B
inline constexpr std::uint8_t ccw_angle_limit = 8;  // 2 B
inline constexpr std::uint8_t temperature_limit = 11;
inline constexpr std::uint8_t min_voltage = 12;
inline constexpr std::uint8_t max_voltage = 13;
inline constexpr std::uint8_t max_torque = 14;  // 2 B
inline constexpr std::uint8_t status_return_level = 16;
inline constexpr std::uint8_t alarm_led = 17;
inline constexpr std::uint8_t shutdown = 18;
inline constexpr std::uint8_t torque_enable = 24;
inline constexpr std::uint8_t led = 25;
inline constexpr std::uint8_t d_gain = 26;
inline constexpr std::uint8_t i_gain = 27;
inline constexpr std::uint8_t p_gain = 28;
inline constexpr std::uint8_t goal_position = 30;  // 2 B
inline constexpr std::uint8_t moving_speed = 32;   // 2 B
inline constexpr std::uint8_t torque_limit = 34;   // 2 B
inline constexpr std::uint8_t present_position = 36;  // 2 B, RO
inline constexpr std::uint8_t present_speed = 38;     // 2 B, RO
inline constexpr std::uint8_t present_load = 40;      // 2 B, RO
inline constexpr std::uint8_t present_voltage = 42;   // RO, 0.1 V
inline constexpr std::uint8_t present_temperature = 43;  // RO
inline constexpr std::uint8_t registered = 44;        // RO
inline constexpr std::uint8_t moving = 46;            // RO
inline constexpr std::uint8_t lock = 47;
inline constexpr std::uint8_t punch = 48;  // 2 B
inline constexpr std::uint8_t current = 68;  // 2 B, RO
inline constexpr std::uint8_t torque_control_mode = 70;
inline constexpr std::uint8_t goal_torque = 71;  // 2 B
inline constexpr std::uint8_t goal_acceleration = 73;
}  // namespace reg

inline constexpr std::size_t kTableSize = 74;

struct RegisterInfo {
  std::uint8_t address;
  std::uint8_t size;
  bool writable;
  std::string_view name;
};

/// Register at exactly `address`, or nullopt for reserved/inner bytes.
std::optional<RegisterInfo> register_at(std::uint8_t address);

/// Device-side error carrying Dynamixel status bits.
class StatusError : public Error {
 public:
  StatusError(const std::string& what, std::uint8_t bits)
      : Error(what), bits_(bits) {}
  std::uint8_t bits() const { return bits_; }

 private:
  std::uint8_t bits_;
};

struct GainLimits {
  int floor = 2;
  int ceiling = 128;
};

struct RegisterFile {
  std::array<std::uint8_t, kTableSize> bytes{};

  std::uint8_t u8(std::uint8_t addr) const { return bytes.at(addr); }
  std::uint16_t u16(std::uint8_t addr) const {
    return static_cast<std::uint16_t>(bytes.at(addr) | (bytes.at(addr + 1) << 8));
  }
  void set_u8(std::uint8_t addr, std::uint8_t v) { bytes.at(addr) = v; }
  void set_u16(std::uint8_t addr, std::uint16_t v) {
    bytes.at(addr) = static_cast<std::uint8_t>(v & 0xFF);
    bytes.at(addr + 1) = static_cast<std::uint8_t>(v >> 8);
  }

  /// Power-on contents for a device id.
  static RegisterFile defaults(std::uint8_t id);
};

/// Host-side write: must start and end on register boundaries and touch only
/// writable registers (StatusError otherwise). p_gain is clamped to the gain
/// limits, goal_position to [0, 4095] and torque_enable to {0, 1}.
RegisterFile device_write(RegisterFile regs, std::uint8_t addr,
                          std::span<const std::uint8_t> data,
                          const GainLimits& limits = {});

/// Throws StatusError when the range leaves the table.
Bytes device_read(const RegisterFile& regs, std::uint8_t addr, std::uint8_t len);

/// Signed-magnitude load encoding: bit 10 set for negative torque, lower
/// bits |tau| / stall * 1023.
std::uint16_t encode_load(double torque, double stall_torque);
double decode_load(std::uint16_t value, double stall_torque);

// ---------------------------------------------------------------------------
// Emulated servo

/// Constants of the first-order motor model. Defaults give a 2 deg static
/// error at 5 N m load and p_gain 32.
struct MotorParams {
  double k_t = 5.0 / (32.0 * 3.14159265358979323846 / 90.0);  // N m / (gain rad)
  double mu_c = 0.03;    // N m
  double mu_v = 10.0 / (55.0 * 2.0 * 3.14159265358979323846 / 60.0);  // N m s / rad
  ServoSpec spec;
  GainLimits gains;
};

/// One servo: register file plus continuous shaft state. The shaft follows
///   tau_m = clamp(k_t * p * (goal - pos) * V / V_nom, +-stall)
///   omega = (tau_m - load - mu_c sgn) / mu_v,  |omega| <= no_load * V / V_nom
/// with the Coulomb term holding the shaft while |tau_m - load| <= mu_c.
class ServoDevice {
 public:
  explicit ServoDevice(std::uint8_t id, MotorParams params = {},
                       double initial_position = 0.0);

  std::uint8_t id() const { return regs_.u8(reg::id); }
  const RegisterFile& registers() const { return regs_; }
  const MotorParams& params() const { return params_; }
  double position() const { return position_; }
  double velocity() const { return velocity_; }
  double motor_torque() const { return torque_; }

  void write(std::uint8_t addr, std::span<const std::uint8_t> data);
  Bytes read(std::uint8_t addr, std::uint8_t len) const;

  /// Advances the shaft by dt in (0, 0.01] s against `load` N m.
  void step(double load, double dt, double bus_voltage);

  /// Registers back to power-on defaults, torque off, goal = present.
  void power_reset();

  /// Executes a request addressed to this device (or broadcast). Returns the
  /// status reply, none for broadcast or sync/bulk instructions.
  std::optional<Packet> handle(const Packet& request);

 private:
  void refresh_feedback(double bus_voltage);

  RegisterFile regs_;
  MotorParams params_;
  double position_;
  double velocity_ = 0.0;
  double torque_ = 0.0;
  double voltage_ = 14.8;
};

// ---------------------------------------------------------------------------
// Loopback bus

struct SyncTarget {
  std::uint8_t id;
  Bytes data;
};

Packet make_sync_write(std::uint8_t addr, std::uint8_t len,
                       const std::vector<SyncTarget>& targets);

struct BulkItem {
  std::uint8_t id;
  std::uint8_t addr;
  std::uint8_t len;
};

Packet make_bulk_read(const std::vector<BulkItem>& items);

/// Half-duplex loopback: one request frame in, the devices' concatenated
/// status frames out. Requests are serialized by the caller.
class Bus {
 public:
  Bus() = default;
  explicit Bus(std::vector<ServoDevice> devices);

  void add(ServoDevice device);
  std::size_t size() const { return devices_.size(); }
  ServoDevice& device(std::uint8_t id);
  const ServoDevice& device(std::uint8_t id) const;
  std::vector<ServoDevice>& devices() { return devices_; }
  const std::vector<ServoDevice>& devices() const { return devices_; }

  Bytes transact(std::span<const std::uint8_t> request);
  std::vector<Packet> transact(const Packet& request);

  /// Every byte that crossed the bus, one frame per entry, in order.
  const std::vector<Bytes>& traffic() const { return traffic_; }
  void clear_traffic() { traffic_.clear(); }
  void set_logging(bool on) { logging_ = on; }

 private:
  std::vector<ServoDevice> devices_;
  std::map<std::uint8_t, std::size_t> index_;
  std::vector<Bytes> traffic_;
  bool logging_ = false;
};

/// Bulk-read reply parsing: id -> data bytes. Throws PacketError on
/// checksum failures or error bits.
std::map<std::uint8_t, Bytes> parse_replies(std::span<const std::uint8_t> bytes);

}  // namespace op2::bus
