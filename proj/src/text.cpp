#include "famt/text.hpp"

#include <cwctype>
#include <fstream>
#include <locale>
#include <sstream>

#include "famt/error.hpp"

namespace famt {
namespace {

const std::ctype<wchar_t>* unicode_ctype() {
  static const std::ctype<wchar_t>* facet = []() -> const std::ctype<wchar_t>* {
    try {
      static const std::locale loc("C.UTF-8");
      return &std::use_facet<std::ctype<wchar_t>>(loc);
    } catch (const std::runtime_error&) {
      return nullptr;
    }
  }();
  return facet;
}

char32_t to_lower(char32_t c) {
  if (c < 0x80) return (c >= 'A' && c <= 'Z') ? c + 32 : c;
  if (const auto* ct = unicode_ctype()) return static_cast<char32_t>(ct->tolower(static_cast<wchar_t>(c)));
  return c;
}

bool is_space(char32_t c) {
  if (c < 0x80) return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
  if (const auto* ct = unicode_ctype()) return ct->is(std::ctype_base::space, static_cast<wchar_t>(c));
  return c == 0x00A0 || c == 0x2028 || c == 0x2029 || c == 0x3000;
}

bool is_punct(char32_t c) {
  if (c < 0x80) return std::ispunct(static_cast<int>(c)) != 0;
  if (const auto* ct = unicode_ctype()) return ct->is(std::ctype_base::punct, static_cast<wchar_t>(c));
  return false;
}

bool is_closing(const std::string& tok) {
  static const std::string closers = ".,!?;:)]}%";
  return tok.size() == 1 && closers.find(tok[0]) != std::string::npos;
}

bool is_opening(const std::string& tok) {
  return tok == "(" || tok == "[" || tok == "{";
}

}  // namespace

std::u32string decode_utf8(std::string_view text) {
  std::u32string out;
  out.reserve(text.size());
  size_t i = 0;
  while (i < text.size()) {
    const auto b = static_cast<unsigned char>(text[i]);
    int extra = 0;
    char32_t cp = 0;
    if (b < 0x80) {
      cp = b;
    } else if ((b >> 5) == 0x6) {
      cp = b & 0x1F;
      extra = 1;
    } else if ((b >> 4) == 0xE) {
      cp = b & 0x0F;
      extra = 2;
    } else if ((b >> 3) == 0x1E) {
      cp = b & 0x07;
      extra = 3;
    } else {
      throw InputError("invalid UTF-8 lead byte at offset " + std::to_string(i));
    }
    if (i + static_cast<size_t>(extra) >= text.size() && extra > 0) {
      throw InputError("truncated UTF-8 sequence at offset " + std::to_string(i));
    }
    for (int k = 1; k <= extra; ++k) {
      const auto c = static_cast<unsigned char>(text[i + k]);
      if ((c >> 6) != 0x2) throw InputError("invalid UTF-8 continuation at offset " + std::to_string(i + k));
      cp = (cp << 6) | (c & 0x3F);
    }
    out.push_back(cp);
    i += 1 + extra;
  }
  return out;
}

std::string encode_utf8(std::u32string_view text) {
  std::string out;
  out.reserve(text.size());
  for (char32_t cp : text) {
    if (cp < 0x80) {
      out.push_back(static_cast<char>(cp));
    } else if (cp < 0x800) {
      out.push_back(static_cast<char>(0xC0 | (cp >> 6)));
      out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    } else if (cp < 0x10000) {
      out.push_back(static_cast<char>(0xE0 | (cp >> 12)));
      out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
      out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    } else {
      out.push_back(static_cast<char>(0xF0 | (cp >> 18)));
      out.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3F)));
      out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
      out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    }
  }
  return out;
}

std::vector<std::string> split_whitespace(std::string_view line) {
  std::vector<std::string> out;
  const std::u32string cps = decode_utf8(line);
  std::u32string cur;
  for (char32_t c : cps) {
    if (is_space(c)) {
      if (!cur.empty()) out.push_back(encode_utf8(cur));
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  if (!cur.empty()) out.push_back(encode_utf8(cur));
  return out;
}

std::string join(const std::vector<std::string>& pieces, std::string_view sep) {
  std::string out;
  for (size_t i = 0; i < pieces.size(); ++i) {
    if (i) out.append(sep);
    out.append(pieces[i]);
  }
  return out;
}

Sentence tokenize(std::string_view line) {
  Sentence out;
  std::u32string cur;
  auto flush = [&] {
    if (!cur.empty()) out.push_back(encode_utf8(cur));
    cur.clear();
  };
  for (char32_t c : decode_utf8(line)) {
    if (is_space(c)) {
      flush();
    } else if (is_punct(c) && c != U'@') {
      flush();
      out.push_back(encode_utf8(std::u32string(1, c)));
    } else {
      cur.push_back(to_lower(c));
    }
  }
  flush();
  return out;
}

std::string detokenize(const Sentence& tokens) {
  std::string out;
  bool glue_next = true;
  for (const auto& tok : tokens) {
    if (!glue_next && !is_closing(tok)) out.push_back(' ');
    out.append(tok);
    glue_next = is_opening(tok);
  }
  return out;
}

std::vector<std::string> read_lines(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open " + path.string());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(std::move(line));
  }
  return lines;
}

void write_lines(const std::filesystem::path& path, const std::vector<std::string>& lines) {
  std::string bytes;
  for (const auto& l : lines) {
    bytes.append(l);
    bytes.push_back('\n');
  }
  write_file(path, bytes);
}

Corpus read_corpus(const std::filesystem::path& path) {
  Corpus corpus;
  for (const auto& line : read_lines(path)) corpus.push_back(split_whitespace(line));
  return corpus;
}

void write_corpus(const std::filesystem::path& path, const Corpus& corpus) {
  std::vector<std::string> lines;
  lines.reserve(corpus.size());
  for (const auto& s : corpus) lines.push_back(join(s));
  write_lines(path, lines);
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::filesystem::path& path, std::string_view bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw InputError("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace famt
