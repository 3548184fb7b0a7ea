#include "op2/servo_bus.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <sstream>

namespace op2::bus {

namespace {

std::uint8_t checksum(std::uint8_t id, std::uint8_t len, std::uint8_t instruction,
                      std::span<const std::uint8_t> params) {
  unsigned sum = id + len + instruction;
  for (std::uint8_t b : params) sum += b;
  return static_cast<std::uint8_t>(~sum & 0xFF);
}

}  // namespace

Bytes encode_packet(const Packet& p) {
  if (p.params.size() > kMaxParams) {
    throw PacketError("packet has " + std::to_string(p.params.size()) +
                      " parameter bytes, maximum is 250");
  }
  if (p.id == 0xFF) throw PacketError("id 255 is not addressable");
  const auto len = static_cast<std::uint8_t>(p.params.size() + 2);
  Bytes out;
  out.reserve(p.params.size() + 6);
  out.insert(out.end(), {0xFF, 0xFF, p.id, len, p.instruction});
  out.insert(out.end(), p.params.begin(), p.params.end());
  out.push_back(checksum(p.id, len, p.instruction, p.params));
  return out;
}

DecodeResult decode_packet(std::span<const std::uint8_t> bytes) {
  const std::size_t n = bytes.size();
  std::size_t i = 0;
  while (true) {
    // Find the preamble.
    while (i + 1 < n && !(bytes[i] == 0xFF && bytes[i + 1] == 0xFF)) ++i;
    if (i + 1 >= n) {
      // A lone trailing FF may be the first preamble byte.
      const bool half = i < n && bytes[i] == 0xFF;
      const std::size_t keep = half ? 1 : 0;
      return Incomplete{6 - keep, n - keep};
    }
    // FF FF FF ...: the id cannot be 0xFF, slide by one.
    if (i + 2 < n && bytes[i + 2] == 0xFF) {
      ++i;
      continue;
    }
    if (i + 4 > n) return Incomplete{i + 6 - n, i};
    const std::uint8_t id = bytes[i + 2];
    const std::uint8_t len = bytes[i + 3];
    if (len < 2) return ChecksumError{i, i + 2};
    const std::size_t total = 4 + static_cast<std::size_t>(len);
    if (i + total > n) return Incomplete{i + total - n, i};
    const std::uint8_t instruction = bytes[i + 4];
    const auto params = bytes.subspan(i + 5, len - 2);
    if (checksum(id, len, instruction, params) != bytes[i + total - 1]) {
      return ChecksumError{i, i + 2};
    }
    Decoded d;
    d.packet.id = id;
    d.packet.instruction = instruction;
    d.packet.params.assign(params.begin(), params.end());
    d.consumed = i + total;
    return d;
  }
}

StreamResult decode_stream(std::span<const std::uint8_t> bytes) {
  StreamResult out;
  std::size_t pos = 0;
  while (pos < bytes.size()) {
    const DecodeResult r = decode_packet(bytes.subspan(pos));
    if (const auto* d = std::get_if<Decoded>(&r)) {
      out.packets.push_back(d->packet);
      pos += d->consumed;
    } else if (const auto* c = std::get_if<ChecksumError>(&r)) {
      ++out.checksum_errors;
      pos += c->consumed;
    } else {
      const auto& inc = std::get<Incomplete>(r);
      out.trailing = bytes.size() - pos - inc.consumed;
      break;
    }
  }
  return out;
}

std::string to_hex(std::span<const std::uint8_t> bytes) {
  std::string s;
  char buf[4];
  for (std::size_t i = 0; i < bytes.size(); ++i) {
    std::snprintf(buf, sizeof buf, i ? " %02X" : "%02X", bytes[i]);
    s += buf;
  }
  return s;
}

Bytes from_hex(std::string_view text) {
  Bytes out;
  std::istringstream in{std::string(text)};
  std::string tok;
  while (in >> tok) {
    if (tok.size() != 2 || !std::isxdigit(static_cast<unsigned char>(tok[0])) ||
        !std::isxdigit(static_cast<unsigned char>(tok[1]))) {
      throw PacketError("bad hex byte '" + tok + "'");
    }
    out.push_back(static_cast<std::uint8_t>(std::stoi(tok, nullptr, 16)));
  }
  return out;
}

// ---------------------------------------------------------------------------

double ticks_to_rad(int ticks, int resolution) {
  return (ticks - resolution / 2) * 2.0 * kPi / resolution;
}

int rad_to_ticks(double rad, int resolution) {
  const double t = std::round(rad * resolution / (2.0 * kPi)) + resolution / 2;
  return static_cast<int>(std::clamp(t, 0.0, static_cast<double>(resolution - 1)));
}

// ---------------------------------------------------------------------------

namespace {

constexpr RegisterInfo kRegisters[] = {
    {reg::model_number, 2, false, "model_number"},
    {reg::firmware, 1, false, "firmware"},
    {reg::id, 1, true, "id"},
    {reg::baud_rate, 1, true, "baud_rate"},
    {reg::return_delay, 1, true, "return_delay"},
    {reg::cw_angle_limit, 2, true, "cw_angle_limit"},
    {reg::ccw_angle_limit, 2, true, "ccw_angle_limit"},
    {reg::temperature_limit, 1, true, "temperature_limit"},
    {reg::min_voltage, 1, true, "min_voltage"},
    {reg::max_voltage, 1, true, "max_voltage"},
    {reg::max_torque, 2, true, "max_torque"},
    {reg::status_return_level, 1, true, "status_return_level"},
    {reg::alarm_led, 1, true, "alarm_led"},
    {reg::shutdown, 1, true, "shutdown"},
    {reg::torque_enable, 1, true, "torque_enable"},
    {reg::led, 1, true, "led"},
    {reg::d_gain, 1, true, "d_gain"},
    {reg::i_gain, 1, true, "i_gain"},
    {reg::p_gain, 1, true, "p_gain"},
    {reg::goal_position, 2, true, "goal_position"},
    {reg::moving_speed, 2, true, "moving_speed"},
    {reg::torque_limit, 2, true, "torque_limit"},
    {reg::present_position, 2, false, "present_position"},
    {reg::present_speed, 2, false, "present_speed"},
    {reg::present_load, 2, false, "present_load"},
    {reg::present_voltage, 1, false, "present_voltage"},
    {reg::present_temperature, 1, false, "present_temperature"},
    {reg::registered, 1, false, "registered"},
    {reg::moving, 1, false, "moving"},
    {reg::lock, 1, true, "lock"},
    {reg::punch, 2, true, "punch"},
    {reg::current, 2, false, "current"},
    {reg::torque_control_mode, 1, true, "torque_control_mode"},
    {reg::goal_torque, 2, true, "goal_torque"},
    {reg::goal_acceleration, 1, true, "goal_acceleration"},
};

}  // namespace

std::optional<RegisterInfo> register_at(std::uint8_t address) {
  for (const auto& r : kRegisters) {
    if (r.address == address) return r;
  }
  return std::nullopt;
}

RegisterFile RegisterFile::defaults(std::uint8_t id) {
  RegisterFile r;
  r.set_u16(reg::model_number, 320);  // MX-106
  r.set_u8(reg::firmware, 36);
  r.set_u8(reg::id, id);
  r.set_u8(reg::baud_rate, 1);
  r.set_u8(reg::return_delay, 0);
  r.set_u16(reg::cw_angle_limit, 0);
  r.set_u16(reg::ccw_angle_limit, 4095);
  r.set_u8(reg::temperature_limit, 80);
  r.set_u8(reg::min_voltage, 60);
  r.set_u8(reg::max_voltage, 160);
  r.set_u16(reg::max_torque, 1023);
  r.set_u8(reg::status_return_level, 2);
  r.set_u8(reg::alarm_led, 36);
  r.set_u8(reg::shutdown, 36);
  r.set_u8(reg::p_gain, 32);
  r.set_u16(reg::goal_position, 2048);
  r.set_u16(reg::torque_limit, 1023);
  r.set_u16(reg::present_position, 2048);
  r.set_u8(reg::present_voltage, 148);
  r.set_u8(reg::present_temperature, 40);
  r.set_u16(reg::punch, 0);
  return r;
}

RegisterFile device_write(RegisterFile regs, std::uint8_t addr,
                          std::span<const std::uint8_t> data,
                          const GainLimits& limits) {
  if (data.empty()) throw StatusError("empty write", status::instruction);
  const std::size_t end = static_cast<std::size_t>(addr) + data.size();
  if (end > kTableSize) {
    throw StatusError("write past the end of the control table", status::range);
  }
  // Validate the whole range before touching anything.
  for (std::size_t a = addr; a < end;) {
    const auto info = register_at(static_cast<std::uint8_t>(a));
    if (!info) {
      throw StatusError("address " + std::to_string(a) +
                            " is reserved or inside a multi-byte register",
                        status::range);
    }
    if (!info->writable) {
      throw StatusError(std::string(info->name) + " is read-only", status::range);
    }
    if (a + info->size > end) {
      throw StatusError("partial write of " + std::string(info->name), status::range);
    }
    a += info->size;
  }
  for (std::size_t k = 0; k < data.size(); ++k) regs.bytes[addr + k] = data[k];

  auto touches = [&](std::uint8_t r) { return addr <= r && r < end; };
  if (touches(reg::p_gain)) {
    const int p = std::clamp<int>(regs.u8(reg::p_gain), limits.floor, limits.ceiling);
    regs.set_u8(reg::p_gain, static_cast<std::uint8_t>(p));
  }
  if (touches(reg::goal_position)) {
    regs.set_u16(reg::goal_position, std::min<std::uint16_t>(regs.u16(reg::goal_position), 4095));
  }
  if (touches(reg::torque_enable)) {
    regs.set_u8(reg::torque_enable, regs.u8(reg::torque_enable) ? 1 : 0);
  }
  if (touches(reg::torque_limit)) {
    regs.set_u16(reg::torque_limit, std::min<std::uint16_t>(regs.u16(reg::torque_limit), 1023));
  }
  if (touches(reg::id) && regs.u8(reg::id) > 253) {
    throw StatusError("id must be 0-253", status::range);
  }
  return regs;
}

Bytes device_read(const RegisterFile& regs, std::uint8_t addr, std::uint8_t len) {
  if (len == 0 || static_cast<std::size_t>(addr) + len > kTableSize) {
    throw StatusError("read outside the control table", status::range);
  }
  return Bytes(regs.bytes.begin() + addr, regs.bytes.begin() + addr + len);
}

std::uint16_t encode_load(double torque, double stall_torque) {
  const double mag = std::min(1023.0, std::round(std::abs(torque) / stall_torque * 1023.0));
  auto v = static_cast<std::uint16_t>(mag);
  if (torque < 0.0 && v != 0) v |= 0x400;
  return v;
}

double decode_load(std::uint16_t value, double stall_torque) {
  const double mag = (value & 0x3FF) / 1023.0 * stall_torque;
  return (value & 0x400) ? -mag : mag;
}

// ---------------------------------------------------------------------------

ServoDevice::ServoDevice(std::uint8_t id, MotorParams params, double initial_position)
    : regs_(RegisterFile::defaults(id)),
      params_(params),
      position_(initial_position) {
  if (id > 253) throw Error("servo id must be 0-253");
  regs_.set_u16(reg::goal_position,
                static_cast<std::uint16_t>(rad_to_ticks(position_, params_.spec.encoder_resolution)));
  refresh_feedback(params_.spec.nominal_voltage);
}

void ServoDevice::write(std::uint8_t addr, std::span<const std::uint8_t> data) {
  regs_ = device_write(regs_, addr, data, params_.gains);
}

Bytes ServoDevice::read(std::uint8_t addr, std::uint8_t len) const {
  return device_read(regs_, addr, len);
}

void ServoDevice::step(double load, double dt, double bus_voltage) {
  if (!(dt > 0.0 && dt <= 0.01)) {
    throw Error("device step dt must be in (0, 0.01] s");
  }
  const ServoSpec& spec = params_.spec;
  const double vr = bus_voltage / spec.nominal_voltage;
  const bool enabled = regs_.u8(reg::torque_enable) != 0;
  const double goal = ticks_to_rad(regs_.u16(reg::goal_position), spec.encoder_resolution);
  const double gain = regs_.u8(reg::p_gain);
  const double limit = spec.stall_torque * regs_.u16(reg::torque_limit) / 1023.0;
  const double stiffness = enabled ? params_.k_t * gain * vr : 0.0;
  const double max_speed = spec.no_load_speed() * std::max(vr, 0.0);

  // Explicit substeps with dt * stiffness / mu_v <= 0.5 keep the position
  // loop monotone.
  int sub = 1;
  if (params_.mu_v > 0.0) {
    sub = std::max(1, static_cast<int>(std::ceil(dt * stiffness / (0.5 * params_.mu_v))));
  }
  const double h = dt / sub;
  for (int k = 0; k < sub; ++k) {
    torque_ = enabled ? std::clamp(stiffness * (goal - position_), -limit, limit) : 0.0;
    const double net = torque_ - load;
    double omega = 0.0;
    if (std::abs(net) > params_.mu_c) {
      omega = params_.mu_v > 0.0 ? (net - params_.mu_c * sign_or_zero(net)) / params_.mu_v
                                 : sign_or_zero(net) * max_speed;
    }
    velocity_ = std::clamp(omega, -max_speed, max_speed);
    position_ += velocity_ * h;
  }
  refresh_feedback(bus_voltage);
}

void ServoDevice::refresh_feedback(double bus_voltage) {
  voltage_ = bus_voltage;
  const ServoSpec& spec = params_.spec;
  regs_.set_u16(reg::present_position,
                static_cast<std::uint16_t>(rad_to_ticks(position_, spec.encoder_resolution)));
  // Speed unit 0.114 rpm, bit 10 = negative direction.
  const double rpm = std::abs(velocity_) * 60.0 / (2.0 * kPi);
  auto speed = static_cast<std::uint16_t>(std::min(1023.0, std::round(rpm / 0.114)));
  if (velocity_ < 0.0 && speed) speed |= 0x400;
  regs_.set_u16(reg::present_speed, speed);
  regs_.set_u16(reg::present_load, encode_load(torque_, spec.stall_torque));
  regs_.set_u8(reg::present_voltage,
               static_cast<std::uint8_t>(std::clamp(std::round(bus_voltage * 10.0), 0.0, 255.0)));
  regs_.set_u8(reg::moving, velocity_ != 0.0 ? 1 : 0);
}

void ServoDevice::power_reset() {
  const std::uint8_t id = this->id();
  regs_ = RegisterFile::defaults(id);
  velocity_ = 0.0;
  torque_ = 0.0;
  regs_.set_u16(reg::goal_position,
                static_cast<std::uint16_t>(rad_to_ticks(position_, params_.spec.encoder_resolution)));
  refresh_feedback(voltage_);
}

std::optional<Packet> ServoDevice::handle(const Packet& request) {
  const bool broadcast = request.id == kBroadcastId;
  if (!broadcast && request.id != id()) return std::nullopt;
  Packet reply{id(), 0, {}};
  try {
    switch (request.instruction) {
      case instr::ping:
        break;
      case instr::read:
        if (request.params.size() != 2) {
          throw StatusError("read takes 2 parameters", status::instruction);
        }
        reply.params = read(request.params[0], request.params[1]);
        break;
      case instr::write:
        if (request.params.size() < 2) {
          throw StatusError("write needs an address and data", status::instruction);
        }
        write(request.params[0], std::span(request.params).subspan(1));
        break;
      case instr::reset:
        power_reset();
        break;
      case instr::sync_write: {
        const auto& p = request.params;
        if (p.size() < 2 || p[1] == 0 || (p.size() - 2) % (p[1] + 1) != 0) {
          throw StatusError("malformed sync write", status::instruction);
        }
        const std::size_t stride = p[1] + 1u;
        for (std::size_t k = 2; k < p.size(); k += stride) {
          if (p[k] == id()) write(p[0], std::span(p).subspan(k + 1, p[1]));
        }
        return std::nullopt;
      }
      default:
        throw StatusError("unsupported instruction", status::instruction);
    }
  } catch (const StatusError& e) {
    reply.instruction = e.bits();
    reply.params.clear();
  }
  if (broadcast) return std::nullopt;
  if (regs_.u8(reg::status_return_level) == 0 && request.instruction != instr::ping) {
    return std::nullopt;
  }
  if (regs_.u8(reg::status_return_level) == 1 && request.instruction != instr::ping &&
      request.instruction != instr::read) {
    return std::nullopt;
  }
  return reply;
}

// ---------------------------------------------------------------------------

Packet make_sync_write(std::uint8_t addr, std::uint8_t len,
                       const std::vector<SyncTarget>& targets) {
  Packet p{kBroadcastId, instr::sync_write, {addr, len}};
  for (const auto& t : targets) {
    if (t.data.size() != len) throw PacketError("sync write data length mismatch");
    p.params.push_back(t.id);
    p.params.insert(p.params.end(), t.data.begin(), t.data.end());
  }
  if (p.params.size() > kMaxParams) throw PacketError("sync write too long");
  return p;
}

Packet make_bulk_read(const std::vector<BulkItem>& items) {
  Packet p{kBroadcastId, instr::bulk_read, {0x00}};
  for (const auto& it : items) {
    p.params.insert(p.params.end(), {it.len, it.id, it.addr});
  }
  if (p.params.size() > kMaxParams) throw PacketError("bulk read too long");
  return p;
}

Bus::Bus(std::vector<ServoDevice> devices) {
  for (auto& d : devices) add(std::move(d));
}

void Bus::add(ServoDevice device) {
  const std::uint8_t id = device.id();
  if (index_.count(id)) throw Error("duplicate servo id " + std::to_string(id));
  index_[id] = devices_.size();
  devices_.push_back(std::move(device));
}

ServoDevice& Bus::device(std::uint8_t id) {
  auto it = index_.find(id);
  if (it == index_.end()) throw Error("no servo with id " + std::to_string(id));
  return devices_[it->second];
}

const ServoDevice& Bus::device(std::uint8_t id) const {
  auto it = index_.find(id);
  if (it == index_.end()) throw Error("no servo with id " + std::to_string(id));
  return devices_[it->second];
}

std::vector<Packet> Bus::transact(const Packet& request) {
  std::vector<Packet> replies;
  if (request.instruction == instr::bulk_read) {
    const auto& p = request.params;
    if (p.empty() || (p.size() - 1) % 3 != 0) {
      throw PacketError("malformed bulk read");
    }
    for (std::size_t k = 1; k < p.size(); k += 3) {
      auto it = index_.find(p[k + 1]);
      if (it == index_.end()) continue;  // absent servo: timeout
      const auto reply = devices_[it->second].handle({p[k + 1], instr::read, {p[k + 2], p[k]}});
      if (reply) replies.push_back(*reply);
    }
    return replies;
  }
  for (auto& d : devices_) {
    if (auto reply = d.handle(request)) replies.push_back(std::move(*reply));
  }
  return replies;
}

Bytes Bus::transact(std::span<const std::uint8_t> request) {
  const DecodeResult r = decode_packet(request);
  const auto* d = std::get_if<Decoded>(&r);
  if (!d) throw PacketError("request is not a complete valid frame");
  if (logging_) traffic_.emplace_back(request.begin(), request.begin() + d->consumed);
  Bytes out;
  for (const Packet& reply : transact(d->packet)) {
    const Bytes frame = encode_packet(reply);
    if (logging_) traffic_.push_back(frame);
    out.insert(out.end(), frame.begin(), frame.end());
  }
  return out;
}

std::map<std::uint8_t, Bytes> parse_replies(std::span<const std::uint8_t> bytes) {
  const StreamResult s = decode_stream(bytes);
  if (s.checksum_errors || s.trailing) throw PacketError("corrupt status stream");
  std::map<std::uint8_t, Bytes> out;
  for (const auto& p : s.packets) {
    if (p.instruction != 0) {
      throw PacketError("servo " + std::to_string(p.id) + " reported error bits " +
                        std::to_string(p.instruction));
    }
    out[p.id] = p.params;
  }
  return out;
}

}  // namespace op2::bus
