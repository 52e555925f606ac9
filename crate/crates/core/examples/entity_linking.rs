//! Gazetteer linking: leftmost-longest matches over word boundaries,
//! case-insensitive.

use ktrlf::{
    linking::{EntityLinker, Gazetteer},
    model::Document,
};

fn main() -> ktrlf::Result<()> {
    let gazetteer = Gazetteer::from_pairs([
        ("wechat", "WeChat"),
        ("wechat pay", "WeChat_Pay"),
        ("tencent", "Tencent"),
        ("pay", "Payment"),
    ])?;
    let doc = Document::new("d", "Tencent keeps expanding WeChat Pay; TENCENT's wechat is everywhere.")?;
    for m in gazetteer.link(&doc)? {
        println!("{:>8}  {:<12} -> {}", m.span.to_string(), m.surface, m.entity_id);
    }
    Ok(())
}
