#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>

namespace stormloop::telemetry {

struct Credentials {
  std::string username;
  std::string password;

  bool empty() const noexcept { return username.empty() && password.empty(); }
  bool operator==(const Credentials&) const = default;
};

namespace detail {

inline constexpr std::string_view kBase64Alphabet =
    "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";

inline std::string base64_encode(std::string_view in) {
  std::string out;
  out.reserve((in.size() + 2) / 3 * 4);
  std::size_t i = 0;
  for (; i + 2 < in.size(); i += 3) {
    const std::uint32_t n = (std::uint8_t(in[i]) << 16) | (std::uint8_t(in[i + 1]) << 8) | std::uint8_t(in[i + 2]);
    out += kBase64Alphabet[(n >> 18) & 63];
    out += kBase64Alphabet[(n >> 12) & 63];
    out += kBase64Alphabet[(n >> 6) & 63];
    out += kBase64Alphabet[n & 63];
  }
  if (const std::size_t rem = in.size() - i; rem > 0) {
    std::uint32_t n = std::uint8_t(in[i]) << 16;
    if (rem == 2) n |= std::uint8_t(in[i + 1]) << 8;
    out += kBase64Alphabet[(n >> 18) & 63];
    out += kBase64Alphabet[(n >> 12) & 63];
    out += rem == 2 ? kBase64Alphabet[(n >> 6) & 63] : '=';
    out += '=';
  }
  return out;
}

inline std::optional<std::string> base64_decode(std::string_view in) {
  static const auto table = [] {
    std::array<int, 256> t{};
    t.fill(-1);
    for (std::size_t i = 0; i < kBase64Alphabet.size(); ++i) t[std::uint8_t(kBase64Alphabet[i])] = int(i);
    return t;
  }();
  if (in.size() % 4 != 0) return std::nullopt;
  std::string out;
  std::uint32_t acc = 0;
  int bits = 0;
  std::size_t pad = 0;
  for (std::size_t i = 0; i < in.size(); ++i) {
    const char c = in[i];
    if (c == '=') {
      if (i + 2 < in.size()) return std::nullopt;
      ++pad;
      continue;
    }
    if (pad > 0) return std::nullopt;
    const int v = table[std::uint8_t(c)];
    if (v < 0) return std::nullopt;
    acc = (acc << 6) | std::uint32_t(v);
    bits += 6;
    if (bits >= 8) {
      bits -= 8;
      out += char((acc >> bits) & 0xFF);
    }
  }
  return out;
}

/// Compares without early exit on the first differing byte.
inline bool constant_time_equal(std::string_view a, std::string_view b) {
  unsigned char diff = a.size() == b.size() ? 0 : 1;
  const std::size_t n = a.size() > b.size() ? a.size() : b.size();
  for (std::size_t i = 0; i < n; ++i) {
    const unsigned char x = i < a.size() ? static_cast<unsigned char>(a[i]) : 0;
    const unsigned char y = i < b.size() ? static_cast<unsigned char>(b[i]) : 0;
    diff |= x ^ y;
  }
  return diff == 0;
}

}  // namespace detail

/// `Basic <base64(user:pass)>`
inline std::string basic_auth_header(const Credentials& c) {
  return "Basic " + detail::base64_encode(c.username + ":" + c.password);
}

/// Parses an Authorization header value; nullopt when it is not a well-formed Basic credential.
inline std::optional<Credentials> parse_basic_auth(std::string_view header) {
  constexpr std::string_view kScheme = "Basic ";
  if (header.substr(0, kScheme.size()) != kScheme) return std::nullopt;
  auto decoded = detail::base64_decode(header.substr(kScheme.size()));
  if (!decoded) return std::nullopt;
  const auto colon = decoded->find(':');
  if (colon == std::string::npos) return std::nullopt;
  return Credentials{decoded->substr(0, colon), decoded->substr(colon + 1)};
}

enum class AuthResult { ok, unauthorized };

class CredentialStore {
 public:
  void add(const Credentials& c) { users_[c.username] = c.password; }

  AuthResult authenticate(const Credentials& c) const {
    if (c.username.empty()) return AuthResult::unauthorized;
    auto it = users_.find(c.username);
    // Compare against a dummy when the user is unknown so both paths do the same work.
    const std::string_view expected = it == users_.end() ? std::string_view{dummy_} : std::string_view{it->second};
    const bool match = detail::constant_time_equal(expected, c.password);
    return it != users_.end() && match ? AuthResult::ok : AuthResult::unauthorized;
  }

  AuthResult authenticate_header(std::string_view header) const {
    auto creds = parse_basic_auth(header);
    return creds ? authenticate(*creds) : AuthResult::unauthorized;
  }

  std::size_t size() const noexcept { return users_.size(); }

 private:
  std::map<std::string, std::string> users_;
  std::string dummy_ = "\x01unknown-user\x01";
};

}  // namespace stormloop::telemetry
