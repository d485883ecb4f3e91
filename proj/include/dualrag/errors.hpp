#pragma once

#include <stdexcept>
#include <string>

namespace dualrag {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// --- outline ---
class DuplicateIteration : public Error {
public:
    using Error::Error;
};
class UnknownEntity : public Error {
public:
    using Error::Error;
};

// --- prompts / chat backends ---
class MissingSlot : public Error {
public:
    explicit MissingSlot(const std::string& slot_name)
        : Error("unbound prompt slot: {" + slot_name + "}"), slot(slot_name) {}
    std::string slot;
};
class UnscriptedRequest : public Error {
public:
    explicit UnscriptedRequest(const std::string& request_tag)
        : Error("no scripted response for tag: " + request_tag), tag(request_tag) {}
    std::string tag;
};
class TransportError : public Error {
public:
    using Error::Error;
};
class ProtocolError : public Error {
public:
    using Error::Error;
};
class BudgetExceeded : public Error {
public:
    using Error::Error;
};

// --- retrieval ---
class DuplicateDocId : public Error {
public:
    using Error::Error;
};
class EmptyQuery : public Error {
public:
    using Error::Error;
};
class EmptyPlan : public Error {
public:
    using Error::Error;
};

// --- model-output parsing ---
class ParseError : public Error {
public:
    explicit ParseError(const std::string& what_arg, std::string raw_text = "")
        : Error(what_arg), raw(std::move(raw_text)) {}
    std::string raw;
};
class NoEvidence : public Error {
public:
    using Error::Error;
};

// --- datasets / evaluation ---
class FormatError : public Error {
public:
    using Error::Error;
};
class JudgeParseError : public Error {
public:
    using Error::Error;
};

}  // namespace dualrag
