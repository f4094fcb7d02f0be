use std::collections::HashSet;

use chrono::{DateTime, NaiveDateTime, SecondsFormat, Utc};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use url::Url;

/// One archived post.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TweetRecord {
    pub tweet_id: String,
    pub posted_at: DateTime<Utc>,
    /// Lowercase, without the leading '#'.
    pub hashtags: Vec<String>,
    pub likes: u64,
    pub retweets: u64,
    pub replies: u64,
    pub image_urls: Vec<String>,
}

/// Wire shape of a metadata line. Unknown keys are ignored.
#[derive(Debug, Serialize, Deserialize)]
struct WireTweet {
    id: Value,
    created_at: String,
    hashtags: Vec<String>,
    like_count: u64,
    retweet_count: u64,
    reply_count: u64,
    image_urls: Vec<String>,
}

/// A line of the metadata file that could not be turned into a record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParseIssue {
    /// 1-based line number in the input.
    pub line: usize,
    pub kind: ParseIssueKind,
    pub detail: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParseIssueKind {
    Malformed,
    DuplicateId,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParseReport {
    pub lines_read: usize,
    pub records: usize,
    pub issues: Vec<ParseIssue>,
}

/// Lowercases and strips one leading '#'. Non-ASCII characters are kept.
pub fn normalize_hashtag(tag: &str) -> String {
    let t = tag.trim();
    t.strip_prefix('#').unwrap_or(t).to_lowercase()
}

fn parse_timestamp(s: &str) -> Result<DateTime<Utc>, String> {
    if let Ok(dt) = DateTime::parse_from_rfc3339(s) {
        return Ok(dt.with_timezone(&Utc));
    }
    // Offset-less ISO-8601 is taken as UTC.
    for fmt in ["%Y-%m-%dT%H:%M:%S%.f", "%Y-%m-%d %H:%M:%S%.f"] {
        if let Ok(n) = NaiveDateTime::parse_from_str(s, fmt) {
            return Ok(n.and_utc());
        }
    }
    Err(format!("created_at {s:?} is not an ISO-8601 timestamp"))
}

fn parse_line(line: &str) -> Result<TweetRecord, String> {
    let wire: WireTweet = serde_json::from_str(line).map_err(|e| e.to_string())?;
    let tweet_id = match &wire.id {
        Value::String(s) => s.clone(),
        Value::Number(n) if n.is_u64() => n.to_string(),
        other => return Err(format!("id must be a string or unsigned integer, got {other}")),
    };
    if tweet_id.is_empty() {
        return Err("id is empty".into());
    }
    let posted_at = parse_timestamp(&wire.created_at)?;
    for u in &wire.image_urls {
        Url::parse(u).map_err(|e| format!("image url {u:?}: {e}"))?;
    }
    let mut hashtags: Vec<String> = Vec::with_capacity(wire.hashtags.len());
    for h in wire.hashtags.iter().map(|h| normalize_hashtag(h)) {
        if !h.is_empty() && !hashtags.contains(&h) {
            hashtags.push(h);
        }
    }
    Ok(TweetRecord {
        tweet_id,
        posted_at,
        hashtags,
        likes: wire.like_count,
        retweets: wire.retweet_count,
        replies: wire.reply_count,
        image_urls: wire.image_urls,
    })
}

/// Parses newline-delimited tweet objects.
///
/// Malformed lines and repeated ids are skipped and listed in the report;
/// the first occurrence of an id wins. Blank lines are ignored.
pub fn parse_metadata<'a, I>(lines: I) -> (Vec<TweetRecord>, ParseReport)
where
    I: IntoIterator<Item = &'a str>,
{
    let mut report = ParseReport::default();
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (idx, line) in lines.into_iter().enumerate() {
        let line_no = idx + 1;
        report.lines_read = line_no;
        if line.trim().is_empty() {
            continue;
        }
        match parse_line(line) {
            Ok(rec) => {
                if !seen.insert(rec.tweet_id.clone()) {
                    report.issues.push(ParseIssue {
                        line: line_no,
                        kind: ParseIssueKind::DuplicateId,
                        detail: format!("tweet id {} already seen", rec.tweet_id),
                    });
                    continue;
                }
                out.push(rec);
            }
            Err(detail) => report.issues.push(ParseIssue {
                line: line_no,
                kind: ParseIssueKind::Malformed,
                detail,
            }),
        }
    }
    report.records = out.len();
    (out, report)
}

/// Serializes a record into one metadata line (no trailing newline).
pub fn serialize_record(rec: &TweetRecord) -> String {
    let wire = WireTweet {
        id: Value::String(rec.tweet_id.clone()),
        created_at: rec.posted_at.to_rfc3339_opts(SecondsFormat::AutoSi, true),
        hashtags: rec.hashtags.clone(),
        like_count: rec.likes,
        retweet_count: rec.retweets,
        reply_count: rec.replies,
        image_urls: rec.image_urls.clone(),
    };
    serde_json::to_string(&wire).expect("tweet serialization is infallible")
}

/// One image link found in a post.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageLink {
    pub tweet_id: String,
    pub url: String,
    pub posted_at: DateTime<Utc>,
    pub hashtags: Vec<String>,
}

/// Flattens records into one link per (record, url) pair, preserving order.
pub fn extract_image_links(records: &[TweetRecord]) -> Vec<ImageLink> {
    records
        .iter()
        .flat_map(|r| {
            r.image_urls.iter().map(move |u| ImageLink {
                tweet_id: r.tweet_id.clone(),
                url: u.clone(),
                posted_at: r.posted_at,
                hashtags: r.hashtags.clone(),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;

    const FIXTURE: &str = r##"{"id":"100","created_at":"2020-03-01T12:00:00Z","hashtags":["#ProAna","thinspo"],"like_count":5,"retweet_count":1,"reply_count":0,"image_urls":[]}
{"id":101,"created_at":"2020-03-02T08:30:00+02:00","hashtags":["travel"],"like_count":0,"retweet_count":0,"reply_count":2,"image_urls":["https://img.example/a.jpg"],"lang":"en"}
{"id":"102","created_at":"2021-12-31T23:59:59Z","hashtags":[],"like_count":7,"retweet_count":3,"reply_count":1,"image_urls":["https://img.example/b.png","https://img.example/c.png"]}"##;

    #[test]
    fn empty_input() {
        let (recs, rep) = parse_metadata(std::iter::empty());
        assert!(recs.is_empty());
        assert!(rep.issues.is_empty());
    }

    #[test]
    fn three_record_fixture() {
        let (recs, rep) = parse_metadata(FIXTURE.lines());
        assert!(rep.issues.is_empty(), "{rep:?}");
        assert_eq!(recs.len(), 3);

        assert_eq!(recs[0].tweet_id, "100");
        assert_eq!(recs[0].hashtags, vec!["proana", "thinspo"]);
        assert_eq!((recs[0].likes, recs[0].retweets, recs[0].replies), (5, 1, 0));
        assert!(recs[0].image_urls.is_empty());

        assert_eq!(recs[1].tweet_id, "101");
        assert_eq!(recs[1].posted_at, Utc.with_ymd_and_hms(2020, 3, 2, 6, 30, 0).unwrap());
        assert_eq!(recs[1].hashtags, vec!["travel"]);
        assert_eq!(recs[1].replies, 2);

        assert_eq!(recs[2].image_urls.len(), 2);
        assert_eq!(recs[2].posted_at, Utc.with_ymd_and_hms(2021, 12, 31, 23, 59, 59).unwrap());

        let links = extract_image_links(&recs);
        assert_eq!(links.len(), 3);
        assert_eq!(links[0].tweet_id, "101");
        assert_eq!(links[1].tweet_id, links[2].tweet_id);
        assert_eq!(links[2].url, "https://img.example/c.png");
    }

    #[test]
    fn hashtag_normalization() {
        assert_eq!(normalize_hashtag("#ProAna"), "proana");
        assert_eq!(normalize_hashtag("Fitspo"), "fitspo");
        assert_eq!(normalize_hashtag("#Ünïcode"), "ünïcode");
    }

    #[test]
    fn malformed_and_duplicate_lines_reported() {
        let input = [
            r#"{"id":"1","created_at":"2020-01-01T00:00:00Z","hashtags":[],"like_count":0,"retweet_count":0,"reply_count":0,"image_urls":[]}"#,
            "not json",
            r#"{"id":"1","created_at":"2020-01-02T00:00:00Z","hashtags":[],"like_count":0,"retweet_count":0,"reply_count":0,"image_urls":[]}"#,
            r#"{"id":"2","created_at":"yesterday","hashtags":[],"like_count":0,"retweet_count":0,"reply_count":0,"image_urls":[]}"#,
            r#"{"id":"3","created_at":"2020-01-01T00:00:00Z","hashtags":[],"like_count":-4,"retweet_count":0,"reply_count":0,"image_urls":[]}"#,
            r#"{"id":"4","created_at":"2020-01-01T00:00:00Z","hashtags":[],"like_count":0,"retweet_count":0,"reply_count":0,"image_urls":["relative/path.png"]}"#,
            r#"{"id":"","created_at":"2020-01-01T00:00:00Z","hashtags":[],"like_count":0,"retweet_count":0,"reply_count":0,"image_urls":[]}"#,
        ];
        let (recs, rep) = parse_metadata(input);
        assert_eq!(recs.len(), 1);
        assert_eq!(recs[0].posted_at.format("%d").to_string(), "01");
        let lines: Vec<_> = rep.issues.iter().map(|i| (i.line, i.kind)).collect();
        assert_eq!(
            lines,
            vec![
                (2, ParseIssueKind::Malformed),
                (3, ParseIssueKind::DuplicateId),
                (4, ParseIssueKind::Malformed),
                (5, ParseIssueKind::Malformed),
                (6, ParseIssueKind::Malformed),
                (7, ParseIssueKind::Malformed),
            ]
        );
    }

    #[test]
    fn links_from_zero_one_two_urls() {
        let (recs, _) = parse_metadata(FIXTURE.lines());
        let counts: Vec<_> = recs.iter().map(|r| r.image_urls.len()).collect();
        assert_eq!(counts, vec![0, 1, 2]);
        assert_eq!(extract_image_links(&recs).len(), 3);
        assert!(extract_image_links(&[]).is_empty());
    }
}
