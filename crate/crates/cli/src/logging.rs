use std::io::Write;

use log::{Level, Log, Metadata, Record};

/// Writes each log record to stderr as one JSON object per line.
struct JsonLogger;

impl Log for JsonLogger {
    fn enabled(&self, m: &Metadata<'_>) -> bool {
        m.level() <= log::max_level()
    }

    fn log(&self, r: &Record<'_>) {
        if !self.enabled(r.metadata()) {
            return;
        }
        let line = serde_json::json!({
            "event": "log",
            "level": r.level().as_str().to_ascii_lowercase(),
            "target": r.target(),
            "message": r.args().to_string(),
        });
        let _ = writeln!(std::io::stderr().lock(), "{line}");
    }

    fn flush(&self) {}
}

static LOGGER: JsonLogger = JsonLogger;

pub fn init(level: Level) {
    if log::set_logger(&LOGGER).is_ok() {
        log::set_max_level(level.to_level_filter());
    }
}

/// Print one JSON event on stdout.
pub fn emit(value: &impl serde::Serialize) {
    let line = serde_json::to_string(value).expect("event serializes");
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "{line}");
    let _ = out.flush();
}
