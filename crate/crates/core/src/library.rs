//! Protocols and scenarios shipped with the binary.

use std::io;
use std::path::Path;

pub struct LibraryEntry {
    pub name: &'static str,
    pub protocol: &'static str,
    /// (scenario name, JSON text); `fair` comes first.
    pub scenarios: &'static [(&'static str, &'static str)],
    pub notes: &'static str,
}

macro_rules! lib_file {
    ($f:literal) => {
        include_str!(concat!(env!("CARGO_MANIFEST_DIR"), "/library/", $f))
    };
}

pub static LIBRARY: &[LibraryEntry] = &[
    LibraryEntry {
        name: "nspkt",
        protocol: lib_file!("nspkt.ab"),
        scenarios: &[
            ("fair", lib_file!("nspkt.fair.json")),
            ("mitm1_lowe", lib_file!("nspkt.mitm1_lowe.json")),
            ("mitm1_lowe_as_printed", lib_file!("nspkt.mitm1_lowe_as_printed.json")),
            ("reuse_nonce", lib_file!("nspkt.reuse_nonce.json")),
        ],
        notes: "Needham-Schroeder public key, timed. mitm1_lowe: Lowe's man-in-the-middle \
                (A opens a session with I, I impersonates A towards B). mitm1_lowe_as_printed: the same \
                override shape with every message kept under KB/KA, a pure relay that leaks \
                nothing. reuse_nonce: a nonce \
                reused across sessions, authoring example without a secrecy violation.",
    },
    LibraryEntry {
        name: "nspkt_lowe_fixed",
        protocol: lib_file!("nspkt_lowe_fixed.ab"),
        scenarios: &[
            ("fair", lib_file!("nspkt_lowe_fixed.fair.json")),
            ("mitm1_lowe_adapted", lib_file!("nspkt_lowe_fixed.mitm1_lowe_adapted.json")),
        ],
        notes: "Lowe's fix: the responder identity inside message 2 blocks the relay.",
    },
    LibraryEntry {
        name: "wmf",
        protocol: lib_file!("wmf.ab"),
        scenarios: &[
            ("fair", lib_file!("wmf.fair.json")),
            ("replay_stale", lib_file!("wmf.replay_stale.json")),
            ("replay_longlife", lib_file!("wmf.replay_longlife.json")),
        ],
        notes: "Wide Mouthed Frog, timed. A compromised old session key is replayed into a \
                later session; the replay succeeds only when the key lifetime is long.",
    },
    LibraryEntry {
        name: "dsp",
        protocol: lib_file!("dsp.ab"),
        scenarios: &[
            ("fair", lib_file!("dsp.fair.json")),
            ("key_compromise", lib_file!("dsp.key_compromise.json")),
        ],
        notes: "Denning-Sacco, timed. key_compromise: B's long-term key with S is known to I.",
    },
];

pub fn find(name: &str) -> Option<&'static LibraryEntry> {
    LIBRARY.iter().find(|e| e.name == name)
}

impl LibraryEntry {
    pub fn scenario(&self, name: &str) -> Option<&'static str> {
        self.scenarios.iter().find(|(n, _)| *n == name).map(|(_, s)| *s)
    }
}

/// Writes every entry as `<name>.ab` and `<name>.<scenario>.json` into `dir`.
pub fn export(dir: &Path) -> io::Result<()> {
    std::fs::create_dir_all(dir)?;
    for e in LIBRARY {
        std::fs::write(dir.join(format!("{}.ab", e.name)), e.protocol)?;
        for (s, text) in e.scenarios {
            std::fs::write(dir.join(format!("{}.{s}.json", e.name)), text)?;
        }
    }
    Ok(())
}
