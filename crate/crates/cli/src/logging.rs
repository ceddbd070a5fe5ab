//! Structured logs on stderr: one logfmt event per line. The level filter
//! comes from `OBLIV1D_LOG` (default `warn`).

use std::io::Write;
use std::time::{SystemTime, UNIX_EPOCH};

pub fn init() {
    let env = env_logger::Env::new().filter_or("OBLIV1D_LOG", "warn");
    env_logger::Builder::from_env(env)
        .format(|buf, rec| {
            let ms = SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_millis())
                .unwrap_or(0);
            writeln!(
                buf,
                "ts={ms} level={} target={} {}",
                rec.level().as_str().to_lowercase(),
                rec.target(),
                rec.args()
            )
        })
        .init();
}
