#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace famt {

using Sentence = std::vector<std::string>;
using Corpus = std::vector<Sentence>;

std::u32string decode_utf8(std::string_view text);
std::string encode_utf8(std::u32string_view text);

// Splits on ASCII and Unicode whitespace, dropping empty pieces.
std::vector<std::string> split_whitespace(std::string_view line);

std::string join(const std::vector<std::string>& pieces, std::string_view sep = " ");

// Lowercases (Unicode-aware) and detaches punctuation characters from words.
// Every punctuation code point becomes its own token.
Sentence tokenize(std::string_view line);

// Inverse of tokenize up to case: closing punctuation re-attaches to the
// preceding word, opening brackets to the following one.
std::string detokenize(const Sentence& tokens);

std::vector<std::string> read_lines(const std::filesystem::path& path);
void write_lines(const std::filesystem::path& path, const std::vector<std::string>& lines);

Corpus read_corpus(const std::filesystem::path& path);
void write_corpus(const std::filesystem::path& path, const Corpus& corpus);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view bytes);

}  // namespace famt
