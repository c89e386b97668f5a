/*
 * Copyright 2026 The GTV Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     https://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <cstring>
#include <fstream>
#include <mutex>
#include <string>
#include <unordered_set>
#include <vector>

#include <nlohmann/json.hpp>

#include "gtv/common.hpp"
#include "gtv/rng.hpp"
#include "gtv/tensor.hpp"

namespace gtv {

// Wire-level protocol messages. Every frame carries round and phase tags.
// idx lists appear only in contributor -> server CvAnnounce frames; raw
// table cells never appear in any frame — the log scanner enforces both.

enum class MsgKind {
  CvRequest,
  CvAnnounce,
  SplitGenLogits,
  BottomDiscLogits,
  GradDown,
  GradUp,
  ShuffleBarrier,
  SynthRequest,
  SynthRows,
  Shutdown,
};

inline const char* to_string(MsgKind k) {
  switch (k) {
    case MsgKind::CvRequest: return "cv_request";
    case MsgKind::CvAnnounce: return "cv_announce";
    case MsgKind::SplitGenLogits: return "split_gen_logits";
    case MsgKind::BottomDiscLogits: return "bottom_disc_logits";
    case MsgKind::GradDown: return "grad_down";
    case MsgKind::GradUp: return "grad_up";
    case MsgKind::ShuffleBarrier: return "shuffle_barrier";
    case MsgKind::SynthRequest: return "synth_request";
    case MsgKind::SynthRows: return "synth_rows";
    case MsgKind::Shutdown: return "shutdown";
  }
  return "?";
}

inline MsgKind msg_kind_from_string(const std::string& s) {
  for (int k = 0; k <= static_cast<int>(MsgKind::Shutdown); ++k)
    if (s == to_string(static_cast<MsgKind>(k))) return static_cast<MsgKind>(k);
  fail<ParseError>("unknown message kind '", s, "'");
}

constexpr int kServerId = -1;

struct Message {
  MsgKind kind = MsgKind::Shutdown;
  int round = 0;
  std::string phase;       // "disc", "gen", "synth", "shuffle"
  int step = 0;            // sub-step within the phase (disc epoch, batch no.)
  int sender = kServerId;  // -1 server, >=0 client id
  int recipient = kServerId;
  int contributor = -1;    // CvAnnounce / SplitGenLogits
  std::string tag;         // "fake" | "real" | piece labels
  Tensor2 matrix;          // logits / gradients / cv batch
  std::vector<std::uint32_t> idx;  // CvAnnounce only
  std::uint64_t count = 0;         // SynthRequest row count
  double aux = 0.0;                // scalar side-channel (e.g. CE loss value)
  json cells;                      // SynthRows decoded values
};

// ---------------------------------------------------------------------------
// base64 f64 little-endian matrix payloads (TCP frames and full logs)
// ---------------------------------------------------------------------------

namespace b64 {

inline const char* alphabet() {
  return "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
}

inline std::string encode(const unsigned char* data, std::size_t n) {
  std::string out;
  out.reserve((n + 2) / 3 * 4);
  for (std::size_t i = 0; i < n; i += 3) {
    unsigned v = data[i] << 16;
    if (i + 1 < n) v |= data[i + 1] << 8;
    if (i + 2 < n) v |= data[i + 2];
    out += alphabet()[(v >> 18) & 63];
    out += alphabet()[(v >> 12) & 63];
    out += i + 1 < n ? alphabet()[(v >> 6) & 63] : '=';
    out += i + 2 < n ? alphabet()[v & 63] : '=';
  }
  return out;
}

inline std::vector<unsigned char> decode(const std::string& s) {
  auto val = [](char c) -> int {
    if (c >= 'A' && c <= 'Z') return c - 'A';
    if (c >= 'a' && c <= 'z') return c - 'a' + 26;
    if (c >= '0' && c <= '9') return c - '0' + 52;
    if (c == '+') return 62;
    if (c == '/') return 63;
    return -1;
  };
  std::vector<unsigned char> out;
  int buf = 0, bits = 0;
  for (char c : s) {
    if (c == '=') break;
    int v = val(c);
    require<ParseError>(v >= 0, "invalid base64 character");
    buf = (buf << 6) | v;
    bits += 6;
    if (bits >= 8) {
      bits -= 8;
      out.push_back(static_cast<unsigned char>((buf >> bits) & 0xff));
    }
  }
  return out;
}

}  // namespace b64

inline json matrix_to_json(const Tensor2& m) {
  std::vector<unsigned char> bytes(m.size() * 8);
  for (std::size_t i = 0; i < m.size(); ++i) {
    std::uint64_t bits;
    std::memcpy(&bits, &m.data[i], 8);
    for (int k = 0; k < 8; ++k)
      bytes[i * 8 + k] = static_cast<unsigned char>(bits >> (8 * k));
  }
  return json{{"rows", m.rows},
              {"cols", m.cols},
              {"f64le", b64::encode(bytes.data(), bytes.size())}};
}

inline Tensor2 matrix_from_json(const json& j) {
  Tensor2 m(j.at("rows").get<std::size_t>(), j.at("cols").get<std::size_t>());
  auto bytes = b64::decode(j.at("f64le").get<std::string>());
  require<ParseError>(bytes.size() == m.size() * 8,
                      "matrix payload size mismatch");
  for (std::size_t i = 0; i < m.size(); ++i) {
    std::uint64_t bits = 0;
    for (int k = 0; k < 8; ++k)
      bits |= static_cast<std::uint64_t>(bytes[i * 8 + k]) << (8 * k);
    std::memcpy(&m.data[i], &bits, 8);
  }
  return m;
}

/// Full wire frame (used verbatim by the TCP transport and by full logs).
inline json message_to_json(const Message& m) {
  json j{{"kind", to_string(m.kind)}, {"round", m.round},
         {"phase", m.phase},          {"step", m.step},
         {"sender", m.sender},        {"recipient", m.recipient},
         {"contributor", m.contributor}, {"tag", m.tag},
         {"count", m.count},          {"aux", m.aux}};
  if (!m.matrix.empty()) j["payload"] = matrix_to_json(m.matrix);
  if (!m.idx.empty()) j["idx"] = m.idx;
  if (!m.cells.is_null()) j["cells"] = m.cells;
  return j;
}

inline Message message_from_json(const json& j) {
  Message m;
  m.kind = msg_kind_from_string(j.at("kind").get<std::string>());
  m.round = j.at("round").get<int>();
  m.phase = j.at("phase").get<std::string>();
  m.step = j.at("step").get<int>();
  m.sender = j.at("sender").get<int>();
  m.recipient = j.at("recipient").get<int>();
  m.contributor = j.at("contributor").get<int>();
  m.tag = j.at("tag").get<std::string>();
  m.count = j.at("count").get<std::uint64_t>();
  m.aux = j.at("aux").get<double>();
  if (j.contains("payload")) m.matrix = matrix_from_json(j["payload"]);
  if (j.contains("idx")) m.idx = j["idx"].get<std::vector<std::uint32_t>>();
  if (j.contains("cells")) m.cells = j["cells"];
  return m;
}

// ---------------------------------------------------------------------------
// message log + leak scanning
// ---------------------------------------------------------------------------

/// Hash set of protected row vectors. A payload row hashing into the set is
/// a verbatim appearance of real data in a message. Only matrices whose
/// width equals some protected row's width can match, so everything else is
/// skipped without hashing.
class LeakScanner {
 public:
  void protect_row(const double* row, std::size_t width) {
    if (width == 0) return;
    hashes_.insert(hash_row(row, width));
    widths_.insert(width);
  }

  void protect_matrix(const Tensor2& m) {
    for (std::size_t r = 0; r < m.rows; ++r)
      protect_row(m.data.data() + r * m.cols, m.cols);
  }

  std::size_t count_matches(const Tensor2& m) const {
    if (hashes_.empty() || m.empty() || !widths_.count(m.cols)) return 0;
    std::size_t hits = 0;
    for (std::size_t r = 0; r < m.rows; ++r)
      if (hashes_.count(hash_row(m.data.data() + r * m.cols, m.cols))) ++hits;
    return hits;
  }

 private:
  static std::uint64_t hash_row(const double* row, std::size_t width) {
    std::uint64_t h = 0xcbf29ce484222325ULL ^ (width * 0x9e3779b97f4a7c15ULL);
    for (std::size_t i = 0; i < width; ++i) {
      std::uint64_t bits;
      std::memcpy(&bits, &row[i], 8);
      for (int k = 0; k < 8; ++k) {
        h ^= (bits >> (8 * k)) & 0xff;
        h *= 0x100000001b3ULL;
      }
    }
    return h;
  }

  std::unordered_set<std::uint64_t> hashes_;
  std::unordered_set<std::size_t> widths_;
};

/// JSON-lines log of every protocol message. Meta mode records structure
/// (kind, route, dims, idx/cv content for CvAnnounce) plus the online leak
/// scan result; full mode additionally embeds payload bytes.
class MessageLog {
 public:
  MessageLog() = default;

  void open(const std::string& path, bool full_payloads) {
    std::lock_guard<std::mutex> lk(mu_);
    out_.open(path);
    require<ParseError>(out_.good(), "cannot open message log '", path, "'");
    full_ = full_payloads;
  }

  bool active() const { return out_.is_open(); }

  void set_scanner(LeakScanner scanner) {
    std::lock_guard<std::mutex> lk(mu_);
    scanner_ = std::move(scanner);
  }

  void record(const Message& m) {
    if (!active()) return;
    std::lock_guard<std::mutex> lk(mu_);
    json e{{"seq", seq_++},
           {"kind", to_string(m.kind)},
           {"round", m.round},
           {"phase", m.phase},
           {"step", m.step},
           {"sender", m.sender},
           {"recipient", m.recipient},
           {"contributor", m.contributor},
           {"tag", m.tag},
           {"has_idx", !m.idx.empty()},
           {"leak_matches", scanner_.count_matches(m.matrix)}};
    if (!m.matrix.empty()) e["dims"] = {m.matrix.rows, m.matrix.cols};
    if (m.kind == MsgKind::CvAnnounce) {
      e["idx"] = m.idx;
      std::vector<int> bits;
      bits.reserve(m.matrix.rows);
      for (std::size_t r = 0; r < m.matrix.rows; ++r) {
        int bit = -1;
        for (std::size_t c = 0; c < m.matrix.cols; ++c)
          if (m.matrix.at(r, c) != 0.0) {
            bit = static_cast<int>(c);
            break;
          }
        bits.push_back(bit);
      }
      e["cv_bits"] = bits;
      e["cv_width"] = m.matrix.cols;
    }
    if (!m.cells.is_null()) {
      e["has_cells"] = true;
      if (full_) e["cells"] = m.cells;
    }
    if (full_ && !m.matrix.empty()) e["payload"] = matrix_to_json(m.matrix);
    out_ << e.dump() << "\n";
  }

  void close() {
    std::lock_guard<std::mutex> lk(mu_);
    if (out_.is_open()) out_.close();
  }

 private:
  std::mutex mu_;
  std::ofstream out_;
  bool full_ = false;
  std::uint64_t seq_ = 0;
  LeakScanner scanner_;
};

inline std::vector<json> read_message_log(const std::string& path) {
  std::ifstream in(path);
  require<ParseError>(in.good(), "cannot open message log '", path, "'");
  std::vector<json> entries;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    entries.push_back(json::parse(line));
  }
  return entries;
}

}  // namespace gtv
