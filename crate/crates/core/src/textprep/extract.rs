use std::sync::OnceLock;

use ego_tree::NodeRef;
use regex::Regex;
use scraper::{Html, Node};

const SKIP_TAGS: &[&str] = &[
    "script", "style", "noscript", "head", "template", "svg", "iframe", "object", "embed",
    "canvas", "select", "option", "button", "input", "textarea",
];

const STOP_TAGS: &[&str] = &["nav", "footer", "aside", "form"];

const BLOCK_TAGS: &[&str] = &[
    "address", "article", "blockquote", "body", "br", "caption", "center", "dd", "details",
    "dialog", "dir", "div", "dl", "dt", "fieldset", "figcaption", "figure", "h1", "h2", "h3",
    "h4", "h5", "h6", "header", "hr", "html", "legend", "li", "main", "menu", "ol", "p", "pre",
    "section", "summary", "table", "tbody", "td", "tfoot", "th", "thead", "tr", "ul",
];

const BOILERPLATE_HINTS: &[&str] =
    &["nav", "menu", "footer", "sidebar", "breadcrumb", "cookie", "banner", "copyright"];

/// Minimum text-to-tag density for a block to count at full weight.
const FULL_DENSITY: f64 = 10.0;

/// Blocks whose link text share reaches this are treated as boilerplate.
const MAX_LINK_DENSITY: f64 = 0.5;

#[derive(Debug, Default, Clone)]
struct Block {
    text: String,
    link_chars: usize,
    tags: usize,
    heading: bool,
}

impl Block {
    fn chars(&self) -> usize {
        self.text.chars().filter(|c| !c.is_whitespace()).count()
    }

    fn link_density(&self) -> f64 {
        let n = self.chars();
        if n == 0 {
            0.0
        } else {
            self.link_chars as f64 / n as f64
        }
    }

    fn score(&self) -> f64 {
        let n = self.chars() as f64;
        let ld = self.link_density();
        if ld >= MAX_LINK_DENSITY {
            return -n;
        }
        let density = n / (1 + self.tags) as f64;
        n * (1.0 - ld) * (density / FULL_DENSITY).min(1.0)
    }
}

#[derive(Default)]
struct Walker {
    blocks: Vec<Block>,
    current: Block,
}

impl Walker {
    fn flush(&mut self) {
        let mut b = std::mem::take(&mut self.current);
        b.text = collapse_ws(&b.text);
        if !b.text.is_empty() {
            self.blocks.push(b);
        }
    }

    fn walk(&mut self, node: NodeRef<'_, Node>, in_link: bool, in_heading: bool) {
        match node.value() {
            Node::Text(t) => {
                let text: &str = t;
                if in_link {
                    self.current.link_chars += text.chars().filter(|c| !c.is_whitespace()).count();
                }
                if in_heading {
                    self.current.heading = true;
                }
                self.current.text.push_str(text);
            }
            Node::Element(el) => {
                let name = el.name();
                if SKIP_TAGS.contains(&name) || STOP_TAGS.contains(&name) || looks_like_boilerplate(el) {
                    return;
                }
                let is_block = BLOCK_TAGS.contains(&name);
                let is_heading = matches!(name, "h1" | "h2" | "h3" | "h4" | "h5" | "h6");
                if is_block {
                    self.flush();
                } else {
                    self.current.text.push(' ');
                }
                self.current.tags += 1;
                for child in node.children() {
                    self.walk(child, in_link || name == "a", in_heading || is_heading);
                }
                if is_block {
                    self.flush();
                } else {
                    self.current.text.push(' ');
                }
            }
            Node::Document | Node::Fragment => {
                for child in node.children() {
                    self.walk(child, in_link, in_heading);
                }
            }
            _ => {}
        }
    }
}

fn looks_like_boilerplate(el: &scraper::node::Element) -> bool {
    if el.attr("role").is_some_and(|r| matches!(r, "navigation" | "contentinfo" | "banner")) {
        return true;
    }
    let attrs = [el.attr("id"), el.attr("class")];
    attrs.iter().flatten().any(|v| {
        let v = v.to_ascii_lowercase();
        v.split(|c: char| !c.is_ascii_alphanumeric())
            .any(|tok| BOILERPLATE_HINTS.contains(&tok))
    })
}

fn collapse_ws(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn residual_tag() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"</?[A-Za-z!][^<>]*>").expect("valid regex"))
}

fn open_angle_letter() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"<([\p{L}/!])").expect("valid regex"))
}

/// Removes anything tag-shaped left in decoded text (e.g. from `&lt;b&gt;`).
fn strip_residual_tags(s: &str) -> String {
    let s = residual_tag().replace_all(s, " ");
    let s = open_angle_letter().replace_all(&s, "< $1");
    s.lines().map(collapse_ws).filter(|l| !l.is_empty()).collect::<Vec<_>>().join("\n")
}

/// Highest-sum contiguous run of block scores (Kadane).
fn best_region(scores: &[f64]) -> Option<(usize, usize)> {
    let mut best: Option<(f64, usize, usize)> = None;
    let (mut sum, mut start) = (0.0, 0);
    for (i, &s) in scores.iter().enumerate() {
        if sum <= 0.0 {
            sum = 0.0;
            start = i;
        }
        sum += s;
        if sum > 0.0 && best.is_none_or(|(b, _, _)| sum > b) {
            best = Some((sum, start, i));
        }
    }
    best.map(|(_, a, b)| (a, b))
}

/// Visible main-content text of an HTML page, one block per line.
///
/// Script, style, head metadata, comments and navigation/footer/aside/form
/// subtrees are dropped. Remaining blocks are scored by text density and link
/// density; the best contiguous region is kept together with all headings.
/// If no region scores positively (pages made only of links, for instance),
/// every remaining block is returned.
pub fn extract_main_text(html: &str) -> String {
    let doc = Html::parse_document(html);
    let mut w = Walker::default();
    w.walk(doc.tree.root(), false, false);
    w.flush();
    let blocks = w.blocks;

    let scores: Vec<f64> = blocks.iter().map(Block::score).collect();
    let kept: Vec<&str> = match best_region(&scores) {
        Some((a, b)) => blocks
            .iter()
            .enumerate()
            .filter(|(i, blk)| (a..=b).contains(i) || blk.heading)
            .map(|(_, blk)| blk.text.as_str())
            .collect(),
        None => blocks.iter().map(|b| b.text.as_str()).collect(),
    };
    strip_residual_tags(&kept.join("\n"))
}

/// Contents of the first `<title>`, whitespace-collapsed.
pub fn extract_title(html: &str) -> Option<String> {
    let doc = Html::parse_document(html);
    let sel = scraper::Selector::parse("title").expect("valid selector");
    let t = collapse_ws(&doc.select(&sel).next()?.text().collect::<String>());
    (!t.is_empty()).then_some(t)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trivial_paragraph() {
        assert_eq!(extract_main_text("<html><body><p>hello</p></body></html>"), "hello");
    }

    #[test]
    fn script_only_body() {
        assert_eq!(extract_main_text("<html><body><script>var x = '<p>hi</p>';</script></body></html>"), "");
        assert_eq!(extract_main_text(""), "");
    }

    #[test]
    fn comments_and_head_dropped() {
        let html = "<html><head><title>T</title><meta name=x content=y></head><body><!-- secret --><p>visible text</p></body></html>";
        assert_eq!(extract_main_text(html), "visible text");
    }

    #[test]
    fn malformed_markup_is_tolerated() {
        let html = "<div><p>unclosed <b>bold <i>nest</div></p><p>next";
        let out = extract_main_text(html);
        assert!(out.contains("unclosed bold nest"), "{out}");
        assert!(out.contains("next"));
    }

    #[test]
    fn escaped_tags_never_survive() {
        let out = extract_main_text("<p>see &lt;script&gt;alert(1)&lt;/script&gt; and a&lt;b</p>");
        assert!(!open_angle_letter().is_match(&out), "{out}");
        assert!(out.contains("alert(1)"));
    }

    #[test]
    fn link_list_page_falls_back_to_all_text() {
        let html = "<ul><li><a href=a>alpha</a></li><li><a href=b>beta</a></li></ul>";
        assert_eq!(extract_main_text(html), "alpha\nbeta");
    }

    #[test]
    fn boilerplate_class_hints() {
        let html = "<div class='top-menu'>Home About</div><p>This is the actual story with enough words to matter.</p>";
        assert_eq!(extract_main_text(html), "This is the actual story with enough words to matter.");
    }

    #[test]
    fn title() {
        assert_eq!(extract_title("<title>  Hidden\n Wiki </title>").as_deref(), Some("Hidden Wiki"));
        assert_eq!(extract_title("<p>x</p>"), None);
    }

    #[test]
    fn kadane_region() {
        assert_eq!(best_region(&[-1.0, 5.0, -2.0, 4.0, -10.0, 3.0]), Some((1, 3)));
        assert_eq!(best_region(&[-1.0, -2.0]), None);
        assert_eq!(best_region(&[]), None);
    }
}
