#pragma once

#include <filesystem>
#include <map>
#include <string>

#include "sbpm/error.hpp"
#include "sbpm/model/types.hpp"

namespace sbpm::model {

// File name -> file bytes. The canonical layout is one `sid.xml` plus one
// `<subject-id>.sbd.xml` per non-external subject.
using FileMap = std::map<std::string, std::string>;

inline constexpr const char* kSidFile = "sid.xml";
std::string behavior_file_name(std::string_view subject_id);

class ParseError : public Error {
public:
    enum class Kind { MissingFile, MalformedXml, SchemaViolation, DanglingReference };

    ParseError(Kind kind, std::string file, int line, int column, std::string detail);

    Kind kind() const noexcept { return kind_; }
    const std::string& file() const noexcept { return file_; }
    int line() const noexcept { return line_; }
    int column() const noexcept { return column_; }
    const std::string& detail() const noexcept { return detail_; }

private:
    Kind kind_;
    std::string file_;
    int line_;
    int column_;
    std::string detail_;
};

ProcessModel parse_model(const FileMap& files);
ProcessModel parse_model_dir(const std::filesystem::path& dir);

// Byte-deterministic: fixed attribute order, two-space indent, LF endings.
FileMap serialize_model(const ProcessModel& model);
void write_model_dir(const ProcessModel& model, const std::filesystem::path& dir);

}  // namespace sbpm::model
