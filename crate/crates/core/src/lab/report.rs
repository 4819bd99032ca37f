use std::fmt;
use std::fmt::Write as _;

/// Delivery tally for one link stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct LinkStats {
    pub sent: u64,
    /// Frames received with a passing CRC/FCS.
    pub received_ok: u64,
    /// Frames that were framed but failed the CRC/FCS.
    pub received_bad: u64,
}

impl LinkStats {
    pub fn missed(&self) -> u64 {
        self.sent - self.received_ok - self.received_bad
    }

    /// Packet error rate `1 - ok/sent`; `None` when nothing was sent.
    pub fn per(&self) -> Option<f64> {
        (self.sent > 0).then(|| 1.0 - self.received_ok as f64 / self.sent as f64)
    }

    pub fn is_valid(&self) -> bool {
        self.received_ok + self.received_bad <= self.sent
    }
}

impl fmt::Display for LinkStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "sent={} ok={} bad={} missed={} per={}",
            self.sent,
            self.received_ok,
            self.received_bad,
            self.missed(),
            fmt_opt(self.per())
        )
    }
}

/// An exact count-over-total ratio. Numerators may be negative for the
/// replay loss when the second stage recovers a frame the first lost.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Ratio {
    pub num: i64,
    pub den: u64,
}

impl Ratio {
    pub fn value(&self) -> Option<f64> {
        (self.den > 0).then(|| self.num as f64 / self.den as f64)
    }
}

impl fmt::Display for Ratio {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{} ({})", self.num, self.den, fmt_opt(self.value()))
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or("n/a".to_string(), |x| format!("{x:.4}"))
}

/// Loss accounting across capture and replay.
///
/// Every loss is counted against the packets originally sent, so
/// `stage1_loss + additional_loss == end_to_end_loss` holds in integers.
#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub stage1: LinkStats,
    /// Replay leg, counted against the recording.
    pub stage2: Option<LinkStats>,
    pub config: Vec<(String, String)>,
}

/// Build a report from one or two stages.
pub fn summarize(stage1: LinkStats, stage2: Option<LinkStats>) -> Report {
    Report {
        stage1,
        stage2,
        config: Vec::new(),
    }
}

impl Report {
    pub fn with_config(mut self, config: Vec<(String, String)>) -> Self {
        self.config = config;
        self
    }

    pub fn no_data(&self) -> bool {
        self.stage1.sent == 0
    }

    /// Packets that made it through every stage.
    pub fn delivered(&self) -> u64 {
        self.stage2.map_or(self.stage1.received_ok, |s| s.received_ok)
    }

    fn ratio(&self, lost: i64) -> Ratio {
        Ratio {
            num: lost,
            den: self.stage1.sent,
        }
    }

    pub fn stage1_loss(&self) -> Ratio {
        self.ratio((self.stage1.sent - self.stage1.received_ok) as i64)
    }

    pub fn end_to_end_loss(&self) -> Ratio {
        self.ratio(self.stage1.sent as i64 - self.delivered() as i64)
    }

    pub fn end_to_end_delivery(&self) -> Ratio {
        self.ratio(self.delivered() as i64)
    }

    pub fn additional_loss(&self) -> Ratio {
        self.ratio(self.stage1.received_ok as i64 - self.delivered() as i64)
    }

    pub fn render_text(&self) -> String {
        let mut s = String::new();
        if self.no_data() {
            s.push_str("status: no data\n");
        }
        let _ = writeln!(s, "stage1: {}", self.stage1);
        if let Some(st) = &self.stage2 {
            let _ = writeln!(s, "stage2: {st}");
        }
        let _ = writeln!(s, "end_to_end_delivery: {}", self.end_to_end_delivery());
        let _ = writeln!(s, "end_to_end_loss: {}", self.end_to_end_loss());
        let _ = writeln!(s, "stage1_loss: {}", self.stage1_loss());
        let _ = writeln!(s, "additional_loss: {}", self.additional_loss());
        for (k, v) in &self.config {
            let _ = writeln!(s, "config {k} = {v}");
        }
        s
    }

    pub fn render_kv(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "status={}", if self.no_data() { "no data" } else { "ok" });
        let mut stats = |name: &str, st: &LinkStats| {
            let _ = writeln!(s, "{name}.sent={}", st.sent);
            let _ = writeln!(s, "{name}.received_ok={}", st.received_ok);
            let _ = writeln!(s, "{name}.received_bad={}", st.received_bad);
            let _ = writeln!(s, "{name}.per={}", fmt_opt(st.per()));
        };
        stats("stage1", &self.stage1);
        if let Some(st) = &self.stage2 {
            stats("stage2", st);
        }
        for (name, r) in [
            ("end_to_end_delivery", self.end_to_end_delivery()),
            ("end_to_end_loss", self.end_to_end_loss()),
            ("stage1_loss", self.stage1_loss()),
            ("additional_loss", self.additional_loss()),
        ] {
            let _ = writeln!(s, "{name}.count={}", r.num);
            let _ = writeln!(s, "{name}={}", fmt_opt(r.value()));
        }
        for (k, v) in &self.config {
            let _ = writeln!(s, "config.{k}={v}");
        }
        s
    }
}
