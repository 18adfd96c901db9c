//! Exchange klines client: paginated GET requests over a pluggable
//! transport, wire-format parsing, and bin-VWAP derivation.
//!
//! The wire format is a JSON array of arrays with columns
//! `[open_time, open, high, low, close, volume, close_time, quote_volume,
//! trades, taker_base, taker_quote, ignore]`; prices and volumes arrive as
//! strings. Transport is a trait so tests run against recorded fixtures.

use std::thread::sleep;
use std::time::Duration;

use super::bar::{fill_gaps, Bar, BarSeries, HOUR_MS};
use super::DataError;

/// Blocking GET returning the response body. Implementations should treat
/// any non-2xx status as an error.
pub trait KlinesTransport {
    fn get(&self, url: &str) -> Result<String, String>;
}

/// Real HTTP transport.
pub struct HttpTransport {
    agent: ureq::Agent,
}

impl Default for HttpTransport {
    fn default() -> Self {
        Self::new()
    }
}

impl HttpTransport {
    pub fn new() -> Self {
        Self {
            agent: ureq::Agent::new_with_defaults(),
        }
    }
}

impl KlinesTransport for HttpTransport {
    fn get(&self, url: &str) -> Result<String, String> {
        let mut response = self.agent.get(url).call().map_err(|e| e.to_string())?;
        response
            .body_mut()
            .read_to_string()
            .map_err(|e| e.to_string())
    }
}

#[derive(Debug, Clone)]
pub struct KlinesConfig {
    pub endpoint: String,
    pub rate_limit_ms: u64,
    pub max_retries: u32,
    pub retry_base_ms: u64,
    pub page_limit: usize,
}

impl Default for KlinesConfig {
    fn default() -> Self {
        Self {
            endpoint: "https://fapi.binance.com/fapi/v1/klines".into(),
            rate_limit_ms: 200,
            max_retries: 5,
            retry_base_ms: 500,
            page_limit: 1000,
        }
    }
}

fn get_with_retry<T: KlinesTransport>(
    transport: &T,
    cfg: &KlinesConfig,
    url: &str,
) -> Result<String, DataError> {
    let mut attempts = 0u32;
    loop {
        match transport.get(url) {
            Ok(body) => return Ok(body),
            Err(reason) => {
                attempts += 1;
                if attempts > cfg.max_retries {
                    return Err(DataError::Http { attempts, reason });
                }
                let backoff = cfg.retry_base_ms.saturating_mul(1 << (attempts - 1));
                if backoff > 0 {
                    sleep(Duration::from_millis(backoff));
                }
            }
        }
    }
}

struct RawKline {
    open_time: i64,
    open: f64,
    high: f64,
    low: f64,
    close: f64,
    volume: f64,
    quote_volume: f64,
}

fn parse_page(body: &str, row_offset: usize) -> Result<Vec<RawKline>, DataError> {
    let rows: serde_json::Value = serde_json::from_str(body).map_err(|e| DataError::Row {
        row: row_offset,
        reason: format!("response is not JSON: {e}"),
    })?;
    let rows = rows.as_array().ok_or_else(|| DataError::Row {
        row: row_offset,
        reason: "response is not a JSON array".into(),
    })?;
    let mut out = Vec::with_capacity(rows.len());
    for (i, row) in rows.iter().enumerate() {
        let row_index = row_offset + i;
        let cols = row.as_array().ok_or_else(|| DataError::Row {
            row: row_index,
            reason: "kline row is not an array".into(),
        })?;
        if cols.len() < 8 {
            return Err(DataError::Row {
                row: row_index,
                reason: format!("kline row has {} columns, expected at least 8", cols.len()),
            });
        }
        let int = |idx: usize| -> Result<i64, DataError> {
            cols[idx].as_i64().ok_or_else(|| DataError::Row {
                row: row_index,
                reason: format!("column {idx} is not an integer"),
            })
        };
        let num = |idx: usize| -> Result<f64, DataError> {
            let parsed = match &cols[idx] {
                serde_json::Value::String(s) => s.parse::<f64>().ok(),
                serde_json::Value::Number(n) => n.as_f64(),
                _ => None,
            };
            parsed
                .filter(|v| v.is_finite())
                .ok_or_else(|| DataError::Row {
                    row: row_index,
                    reason: format!("column {idx} is not a finite number"),
                })
        };
        out.push(RawKline {
            open_time: int(0)?,
            open: num(1)?,
            high: num(2)?,
            low: num(3)?,
            close: num(4)?,
            volume: num(5)?,
            quote_volume: num(7)?,
        });
    }
    Ok(out)
}

/// Fetches hourly klines for `[start_ms, end_ms)`, merging paginated
/// requests. Zero-volume rows carry the previous bin VWAP forward and are
/// flagged inactive; leading zero-volume rows are dropped.
pub fn fetch_klines<T: KlinesTransport>(
    transport: &T,
    cfg: &KlinesConfig,
    symbol: &str,
    start_ms: i64,
    end_ms: i64,
) -> Result<BarSeries, DataError> {
    if end_ms <= start_ms {
        return Err(DataError::BadSpec("end must be after start".into()));
    }
    let mut raw: Vec<RawKline> = Vec::new();
    let mut cursor = start_ms;
    loop {
        let url = format!(
            "{}?symbol={}&interval=1h&startTime={}&endTime={}&limit={}",
            cfg.endpoint,
            symbol,
            cursor,
            end_ms - 1,
            cfg.page_limit
        );
        let body = get_with_retry(transport, cfg, &url)?;
        let page = parse_page(&body, raw.len())?;
        if page.is_empty() {
            break;
        }
        let page_len = page.len();
        for k in page {
            if k.open_time >= end_ms {
                break;
            }
            cursor = k.open_time + HOUR_MS;
            raw.push(k);
        }
        if page_len < cfg.page_limit || cursor >= end_ms {
            break;
        }
        if cfg.rate_limit_ms > 0 {
            sleep(Duration::from_millis(cfg.rate_limit_ms));
        }
    }
    if raw.is_empty() {
        return Err(DataError::InvalidSeries(format!(
            "no klines returned for {symbol} in [{start_ms}, {end_ms})"
        )));
    }

    let mut bars: Vec<Bar> = Vec::with_capacity(raw.len());
    let mut carried_vwap: Option<f64> = None;
    for k in raw {
        if k.volume > 0.0 {
            let bin_vwap = k.quote_volume / k.volume;
            carried_vwap = Some(bin_vwap);
            bars.push(Bar {
                open_time: k.open_time,
                open: k.open,
                high: k.high,
                low: k.low,
                close: k.close,
                volume: k.volume,
                quote_volume: k.quote_volume,
                bin_vwap,
                inactive: false,
            });
        } else if let Some(vwap) = carried_vwap {
            bars.push(Bar {
                open_time: k.open_time,
                open: k.open,
                high: k.high,
                low: k.low,
                close: k.close,
                volume: 0.0,
                quote_volume: 0.0,
                bin_vwap: vwap,
                inactive: true,
            });
        }
        // zero-volume rows before the first trade are skipped
    }
    let bars = fill_gaps(bars, HOUR_MS)?;
    BarSeries::new(symbol, bars)
}
