#include "qdawg/isa.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cstring>
#include <optional>
#include <sstream>

#include "qdawg/errors.hpp"
#include "qdawg/text.hpp"
#include "byte_io.hpp"

namespace qdawg {

// ---------------------------------------------------------------------------
// Construction helpers

Instruction Instruction::set_param(ChannelId ch, Affine t, ParamField f, double value, double slope) {
    Instruction i;
    i.op = Opcode::SetParam;
    i.channel = ch;
    i.time = t;
    i.field = f;
    i.value = value;
    i.slope = slope;
    return i;
}

Instruction Instruction::play(ChannelId ch, Affine t, Affine len) {
    Instruction i;
    i.op = Opcode::Play;
    i.channel = ch;
    i.time = t;
    i.length = len;
    return i;
}

Instruction Instruction::trigger(ChannelId port, Affine t, Affine len, std::string tag) {
    Instruction i;
    i.op = Opcode::Trigger;
    i.channel = port;
    i.time = t;
    i.length = len;
    i.tag = std::move(tag);
    return i;
}

Instruction Instruction::sync(Affine shot_length) {
    Instruction i;
    i.op = Opcode::Sync;
    i.time = shot_length;
    return i;
}

Instruction Instruction::loop_begin(std::int64_t count, LoopRole role) {
    Instruction i;
    i.op = Opcode::LoopBegin;
    i.count = count;
    i.role = role;
    return i;
}

Instruction Instruction::loop_end() {
    Instruction i;
    i.op = Opcode::LoopEnd;
    return i;
}

Instruction Instruction::sweep_step(std::int64_t increment) {
    Instruction i;
    i.op = Opcode::SweepStep;
    i.count = increment;
    return i;
}

Instruction Instruction::halt() { return Instruction{}; }

std::string_view to_string(Opcode op) {
    switch (op) {
        case Opcode::SetParam: return "SET_PARAM";
        case Opcode::Play: return "PLAY";
        case Opcode::Trigger: return "TRIGGER";
        case Opcode::Sync: return "SYNC";
        case Opcode::LoopBegin: return "LOOP_BEGIN";
        case Opcode::LoopEnd: return "LOOP_END";
        case Opcode::SweepStep: return "SWEEP_STEP";
        case Opcode::Halt: return "HALT";
    }
    return "?";
}

const Channel* StreamMeta::channel(ChannelId id) const {
    for (const auto& c : channels)
        if (c.id() == id) return &c;
    return nullptr;
}

// ---------------------------------------------------------------------------
// Text assembly

namespace {

constexpr std::array<std::string_view, 4> kFieldNames{"freq", "gain", "phase", "envelope"};

std::string operand_text(const Affine& a) {
    std::string s = std::to_string(a.base);
    if (a.per_sweep > 0) s += "+" + std::to_string(a.per_sweep) + "r";
    if (a.per_sweep < 0) s += std::to_string(a.per_sweep) + "r";
    return s;
}

std::optional<Affine> parse_operand(std::string_view s) {
    if (s.empty()) return std::nullopt;
    if (s.back() != 'r') {
        auto v = text::parse_int(s);
        if (!v) return std::nullopt;
        return Affine{*v, 0};
    }
    const auto body = s.substr(0, s.size() - 1);
    const auto split = body.find_last_of("+-");
    if (split == std::string_view::npos || split == 0) return std::nullopt;
    auto base = text::parse_int(body.substr(0, split));
    auto coeff = text::parse_int(body.substr(split));
    if (!base || !coeff) return std::nullopt;
    return Affine{*base, *coeff};
}

std::optional<ChannelKind> parse_kind(std::string_view s) {
    for (auto k : {ChannelKind::MicrowaveGenerator, ChannelKind::LaserGate, ChannelKind::ReadoutTrigger, ChannelKind::Digitizer})
        if (to_string(k) == s) return k;
    return std::nullopt;
}

// key=value fields of one assembly line.
class Fields {
  public:
    Fields(std::vector<std::string_view> tokens, int line) : line_(line) {
        for (std::size_t i = 1; i < tokens.size(); ++i) {
            const auto eq = tokens[i].find('=');
            if (eq == std::string_view::npos) throw MalformedStreamError("line " + std::to_string(line) + ": expected key=value");
            kv_.emplace_back(tokens[i].substr(0, eq), tokens[i].substr(eq + 1));
        }
    }

    std::string_view get(std::string_view key) const {
        for (const auto& [k, v] : kv_)
            if (k == key) return v;
        throw MalformedStreamError("line " + std::to_string(line_) + ": missing field '" + std::string(key) + "'");
    }
    std::int64_t integer(std::string_view key) const {
        auto v = text::parse_int(get(key));
        if (!v) fail(key);
        return *v;
    }
    double real(std::string_view key) const {
        auto v = text::parse_double(get(key));
        if (!v) fail(key);
        return *v;
    }
    Affine operand(std::string_view key) const {
        auto v = parse_operand(get(key));
        if (!v) fail(key);
        return *v;
    }
    ChannelId channel(std::string_view key) const {
        const auto v = integer(key);
        if (v < 0 || v > 255) fail(key);
        return static_cast<ChannelId>(v);
    }
    [[noreturn]] void fail(std::string_view key) const {
        throw MalformedStreamError("line " + std::to_string(line_) + ": bad value for '" + std::string(key) + "'");
    }

  private:
    std::vector<std::pair<std::string_view, std::string_view>> kv_;
    int line_;
};

}  // namespace

std::string to_text(const InstructionStream& stream) {
    std::ostringstream os;
    const auto& m = stream.meta;
    os << "; qdawg virtual ISA v1\n";
    os << ".clock generator=" << text::format_double(m.clock.generator_clock_hz())
       << " readout=" << text::format_double(m.clock.readout_clock_hz()) << " sync_epoch=" << m.clock.cycles_per_sync_epoch()
       << "\n";
    for (const auto& c : m.channels)
        os << ".channel id=" << int(c.id()) << " kind=" << to_string(c.kind()) << " band_low=" << text::format_double(c.band().low_hz)
           << " band_high=" << text::format_double(c.band().high_hz) << "\n";
    os << ".meta total_cycles=" << m.total_cycles << " sweep_points=" << m.n_sweep_points << " inner_reps=" << m.inner_reps << "\n";
    for (const auto& i : stream.instructions) {
        os << to_string(i.op);
        switch (i.op) {
            case Opcode::SetParam:
                os << " ch=" << int(i.channel) << " t=" << operand_text(i.time) << " field=" << kFieldNames[int(i.field)]
                   << " value=" << text::format_double(i.value);
                if (i.slope != 0.0) os << " slope=" << text::format_double(i.slope);
                break;
            case Opcode::Play:
                os << " ch=" << int(i.channel) << " t=" << operand_text(i.time) << " len=" << operand_text(i.length);
                break;
            case Opcode::Trigger:
                os << " port=" << int(i.channel) << " t=" << operand_text(i.time) << " len=" << operand_text(i.length)
                   << " tag=" << i.tag;
                break;
            case Opcode::Sync: os << " t=" << operand_text(i.time); break;
            case Opcode::LoopBegin:
                os << " count=" << i.count << " role=" << (i.role == LoopRole::Sweep ? "sweep" : "repeat");
                break;
            case Opcode::SweepStep: os << " reg=0 inc=" << i.count; break;
            case Opcode::LoopEnd:
            case Opcode::Halt: break;
        }
        os << "\n";
    }
    return os.str();
}

InstructionStream parse_text(std::string_view body) {
    InstructionStream s;
    int line_no = 0;
    for (auto line : text::split(body, '\n')) {
        ++line_no;
        if (const auto c = line.find(';'); c != std::string_view::npos) line = line.substr(0, c);
        const auto tokens = text::split_ws(text::trim(line));
        if (tokens.empty()) continue;
        const Fields f(tokens, line_no);
        const auto head = tokens[0];
        if (head == ".clock") {
            s.meta.clock = ClockSpec(f.real("generator"), f.real("readout"), f.integer("sync_epoch"));
        } else if (head == ".channel") {
            const auto kind = parse_kind(f.get("kind"));
            if (!kind) f.fail("kind");
            s.meta.channels.emplace_back(f.channel("id"), *kind, Band{f.real("band_low"), f.real("band_high")});
        } else if (head == ".meta") {
            s.meta.total_cycles = f.integer("total_cycles");
            s.meta.n_sweep_points = static_cast<std::size_t>(f.integer("sweep_points"));
            s.meta.inner_reps = f.integer("inner_reps");
        } else if (head == "SET_PARAM") {
            const auto name = f.get("field");
            std::optional<ParamField> field;
            for (std::size_t k = 0; k < kFieldNames.size(); ++k)
                if (kFieldNames[k] == name) field = static_cast<ParamField>(k);
            if (!field) f.fail("field");
            double slope = 0.0;
            if (line.find("slope=") != std::string_view::npos) slope = f.real("slope");
            s.instructions.push_back(Instruction::set_param(f.channel("ch"), f.operand("t"), *field, f.real("value"), slope));
        } else if (head == "PLAY") {
            s.instructions.push_back(Instruction::play(f.channel("ch"), f.operand("t"), f.operand("len")));
        } else if (head == "TRIGGER") {
            s.instructions.push_back(
                Instruction::trigger(f.channel("port"), f.operand("t"), f.operand("len"), std::string(f.get("tag"))));
        } else if (head == "SYNC") {
            s.instructions.push_back(Instruction::sync(f.operand("t")));
        } else if (head == "LOOP_BEGIN") {
            const auto role = f.get("role");
            if (role != "sweep" && role != "repeat") f.fail("role");
            s.instructions.push_back(Instruction::loop_begin(f.integer("count"), role == "sweep" ? LoopRole::Sweep : LoopRole::Repeat));
        } else if (head == "LOOP_END") {
            s.instructions.push_back(Instruction::loop_end());
        } else if (head == "SWEEP_STEP") {
            s.instructions.push_back(Instruction::sweep_step(f.integer("inc")));
        } else if (head == "HALT") {
            s.instructions.push_back(Instruction::halt());
        } else {
            throw MalformedStreamError("line " + std::to_string(line_no) + ": unknown mnemonic '" + std::string(head) + "'");
        }
    }
    return s;
}

// ---------------------------------------------------------------------------
// Binary form
//
//   "QDWGISA1"                         8-byte magic
//   f64 generator_hz, f64 readout_hz, i64 sync_epoch
//   i64 total_cycles, u64 sweep_points, i64 inner_reps
//   u32 n_channels, n x { u8 id, u8 kind, f64 band_low, f64 band_high }
//   u32 n_instructions, n x { u32 byte_length, record }
//   record: u8 op, u8 channel, i64 t.base, i64 t.per_sweep, i64 len.base,
//           i64 len.per_sweep, u8 field, f64 value, f64 slope, i64 count,
//           u8 role, u16 tag_length, tag bytes
// All integers and IEEE-754 doubles little-endian.

namespace {

constexpr char kMagic[8] = {'Q', 'D', 'W', 'G', 'I', 'S', 'A', '1'};

}  // namespace

std::vector<std::uint8_t> to_binary(const InstructionStream& stream) {
    detail::Writer w;
    w.bytes({kMagic, sizeof kMagic});
    const auto& m = stream.meta;
    w.put(m.clock.generator_clock_hz());
    w.put(m.clock.readout_clock_hz());
    w.put<std::int64_t>(m.clock.cycles_per_sync_epoch());
    w.put<std::int64_t>(m.total_cycles);
    w.put<std::uint64_t>(m.n_sweep_points);
    w.put<std::int64_t>(m.inner_reps);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(m.channels.size()));
    for (const auto& c : m.channels) {
        w.put<std::uint8_t>(c.id());
        w.put<std::uint8_t>(static_cast<std::uint8_t>(c.kind()));
        w.put(c.band().low_hz);
        w.put(c.band().high_hz);
    }
    w.put<std::uint32_t>(static_cast<std::uint32_t>(stream.instructions.size()));
    for (const auto& i : stream.instructions) {
        detail::Writer r;
        r.put<std::uint8_t>(static_cast<std::uint8_t>(i.op));
        r.put<std::uint8_t>(i.channel);
        r.put<std::int64_t>(i.time.base);
        r.put<std::int64_t>(i.time.per_sweep);
        r.put<std::int64_t>(i.length.base);
        r.put<std::int64_t>(i.length.per_sweep);
        r.put<std::uint8_t>(static_cast<std::uint8_t>(i.field));
        r.put(i.value);
        r.put(i.slope);
        r.put<std::int64_t>(i.count);
        r.put<std::uint8_t>(static_cast<std::uint8_t>(i.role));
        r.put<std::uint16_t>(static_cast<std::uint16_t>(i.tag.size()));
        r.bytes(i.tag);
        w.put<std::uint32_t>(static_cast<std::uint32_t>(r.out.size()));
        w.out.insert(w.out.end(), r.out.begin(), r.out.end());
    }
    return std::move(w.out);
}

InstructionStream parse_binary(std::span<const std::uint8_t> bytes) {
    detail::Reader<MalformedStreamError> r(bytes);
    if (r.bytes(sizeof kMagic) != std::string_view(kMagic, sizeof kMagic)) throw MalformedStreamError("bad magic");
    InstructionStream s;
    const auto gen = r.get<double>();
    const auto rd = r.get<double>();
    const auto epoch = r.get<std::int64_t>();
    try {
        s.meta.clock = ClockSpec(gen, rd, epoch);
    } catch (const std::invalid_argument& e) {
        throw MalformedStreamError(e.what());
    }
    s.meta.total_cycles = r.get<std::int64_t>();
    s.meta.n_sweep_points = r.get<std::uint64_t>();
    s.meta.inner_reps = r.get<std::int64_t>();
    const auto n_channels = r.get<std::uint32_t>();
    for (std::uint32_t k = 0; k < n_channels; ++k) {
        const auto id = r.get<std::uint8_t>();
        const auto kind = r.get<std::uint8_t>();
        if (kind > 3) throw MalformedStreamError("bad channel kind");
        const auto lo = r.get<double>();
        const auto hi = r.get<double>();
        s.meta.channels.emplace_back(id, static_cast<ChannelKind>(kind), Band{lo, hi});
    }
    const auto n = r.get<std::uint32_t>();
    s.instructions.reserve(n);
    for (std::uint32_t k = 0; k < n; ++k) {
        const auto len = r.get<std::uint32_t>();
        const auto begin = r.pos();
        Instruction i;
        const auto op = r.get<std::uint8_t>();
        if (op < 1 || op > 8) throw MalformedStreamError("bad opcode");
        i.op = static_cast<Opcode>(op);
        i.channel = r.get<std::uint8_t>();
        i.time.base = r.get<std::int64_t>();
        i.time.per_sweep = r.get<std::int64_t>();
        i.length.base = r.get<std::int64_t>();
        i.length.per_sweep = r.get<std::int64_t>();
        const auto field = r.get<std::uint8_t>();
        if (field > 3) throw MalformedStreamError("bad param field");
        i.field = static_cast<ParamField>(field);
        i.value = r.get<double>();
        i.slope = r.get<double>();
        i.count = r.get<std::int64_t>();
        const auto role = r.get<std::uint8_t>();
        if (role > 1) throw MalformedStreamError("bad loop role");
        i.role = static_cast<LoopRole>(role);
        i.tag = r.bytes(r.get<std::uint16_t>());
        if (r.pos() - begin != len) throw MalformedStreamError("instruction length prefix mismatch");
        s.instructions.push_back(std::move(i));
    }
    if (!r.done()) throw MalformedStreamError("trailing bytes after stream");
    return s;
}

// ---------------------------------------------------------------------------
// Interpretation

void verify_structure(const InstructionStream& stream) {
    const auto& ins = stream.instructions;
    if (ins.empty() || ins.back().op != Opcode::Halt) throw MalformedStreamError("stream must end with HALT");
    std::vector<LoopRole> stack;
    bool seen_sweep_loop = false;
    for (std::size_t k = 0; k < ins.size(); ++k) {
        const auto& i = ins[k];
        switch (i.op) {
            case Opcode::LoopBegin:
                if (i.count < 1) throw MalformedStreamError("LOOP_BEGIN count must be >= 1");
                if (stack.size() == 2) throw MalformedStreamError("loop nesting deeper than 2");
                if (i.role == LoopRole::Sweep) {
                    if (seen_sweep_loop || !stack.empty()) throw MalformedStreamError("sweep loop must be a single outermost loop");
                    seen_sweep_loop = true;
                }
                stack.push_back(i.role);
                break;
            case Opcode::LoopEnd:
                if (stack.empty()) throw MalformedStreamError("LOOP_END without LOOP_BEGIN");
                stack.pop_back();
                break;
            case Opcode::Halt:
                if (k + 1 != ins.size()) throw MalformedStreamError("HALT before end of stream");
                break;
            case Opcode::SetParam:
            case Opcode::Play:
            case Opcode::Trigger:
                if (!stream.meta.channel(i.channel))
                    throw MalformedStreamError("instruction references undeclared channel " + std::to_string(i.channel));
                break;
            default: break;
        }
    }
    if (!stack.empty()) throw MalformedStreamError("LOOP_BEGIN without LOOP_END");
}

namespace {

struct ChannelRegisters {
    double freq = 0.0, gain = 0.0, phase = 0.0, envelope = 0.0;
};

class Walker {
  public:
    Walker(const InstructionStream& s, const std::function<void(const Shot&)>& cb) : s_(s), cb_(cb) {
        const auto& ins = s.instructions;
        match_.assign(ins.size(), 0);
        std::vector<std::size_t> open;
        for (std::size_t k = 0; k < ins.size(); ++k) {
            if (ins[k].op == Opcode::LoopBegin) open.push_back(k);
            if (ins[k].op == Opcode::LoopEnd) {
                match_[open.back()] = k;
                open.pop_back();
            }
        }
        epoch_ = s.meta.clock.cycles_per_sync_epoch();
        // Power-on state: laser gates open at full drive, generators silent.
        for (const auto& c : s.meta.channels)
            if (c.kind() == ChannelKind::LaserGate) regs_[c.id()].gain = 1.0;
    }

    Cycles run() {
        exec(0, s_.instructions.size());
        return clock_;
    }

  private:
    void exec(std::size_t b, std::size_t e) {
        const auto& ins = s_.instructions;
        for (std::size_t k = b; k < e; ++k) {
            const auto& i = ins[k];
            switch (i.op) {
                case Opcode::SetParam: {
                    auto& r = regs_[i.channel];
                    const double v = i.value + i.slope * static_cast<double>(reg_);
                    switch (i.field) {
                        case ParamField::Frequency: r.freq = v; break;
                        case ParamField::Gain: r.gain = v; break;
                        case ParamField::Phase: r.phase = v; break;
                        case ParamField::Envelope: r.envelope = v; break;
                    }
                    break;
                }
                case Opcode::Play:
                case Opcode::Trigger: emit(i); break;
                case Opcode::Sync: {
                    const Cycles len = i.time.at(reg_);
                    if (len < 0) throw MalformedStreamError("SYNC with negative shot length");
                    flush(len);
                    clock_ = align_up(clock_ + len, epoch_);
                    break;
                }
                case Opcode::LoopBegin: {
                    const auto end = match_[k];
                    const auto saved_rep = rep_;
                    for (std::int64_t n = 0; n < i.count; ++n) {
                        if (i.role == LoopRole::Repeat) rep_ = static_cast<std::size_t>(n);
                        exec(k + 1, end);
                    }
                    rep_ = saved_rep;
                    k = end;
                    break;
                }
                case Opcode::LoopEnd: break;
                case Opcode::SweepStep:
                    reg_ += i.count;
                    ++sweep_;
                    break;
                case Opcode::Halt:
                    if (!shot_.events.empty()) {
                        Cycles len = s_.meta.total_cycles - clock_;
                        for (const auto& ev : shot_.events) len = std::max(len, ev.start + ev.length);
                        flush(len);
                        clock_ += len;
                    }
                    return;
            }
        }
    }

    void emit(const Instruction& i) {
        const Cycles t = i.time.at(reg_);
        const Cycles len = i.length.at(reg_);
        if (t < 0 || len < 0) throw MalformedStreamError("operand evaluates negative at sweep register " + std::to_string(reg_));
        if (len == 0) return;
        ExpandedEvent ev;
        ev.sweep_index = sweep_;
        ev.rep_index = rep_;
        ev.channel = i.channel;
        ev.start = t;
        ev.length = len;
        if (i.op == Opcode::Trigger) {
            ev.payload = TriggerPayload{i.tag};
        } else {
            const auto* ch = s_.meta.channel(i.channel);
            const auto& r = regs_[i.channel];
            if (ch->kind() == ChannelKind::MicrowaveGenerator)
                ev.payload = MicrowavePayload{r.freq, 0.0, r.gain, r.phase, static_cast<Envelope>(static_cast<int>(r.envelope))};
            else
                ev.payload = LaserPayload{r.gain};
        }
        if (shot_.events.empty()) {
            shot_.sweep_index = sweep_;
            shot_.rep_index = rep_;
        }
        shot_.events.push_back(std::move(ev));
    }

    void flush(Cycles len) {
        if (shot_.events.empty()) {
            shot_.sweep_index = sweep_;
            shot_.rep_index = rep_;
        }
        shot_.start_cycle = clock_;
        shot_.length_cycles = len;
        shot_.register_value = reg_;
        cb_(shot_);
        shot_.events.clear();
    }

    const InstructionStream& s_;
    const std::function<void(const Shot&)>& cb_;
    std::vector<std::size_t> match_;
    std::array<ChannelRegisters, 256> regs_{};
    Shot shot_;
    Cycles clock_ = 0;
    Cycles epoch_ = 1;
    std::int64_t reg_ = 0;
    std::size_t sweep_ = 0;
    std::size_t rep_ = 0;
};

}  // namespace

Cycles walk(const InstructionStream& stream, const std::function<void(const Shot&)>& on_shot) {
    verify_structure(stream);
    return Walker(stream, on_shot).run();
}

}  // namespace qdawg
