use std::fmt::Write;

use super::TableGrid;

/// `<table>` markup with one `<tr>` per grid row; cells appear in the row
/// where they start, ordered by column.
pub fn to_html(grid: &TableGrid) -> String {
    let mut cells: Vec<_> = grid.cells.iter().collect();
    cells.sort_by_key(|c| (c.row, c.col));
    let mut out = String::from("<table>");
    let mut it = cells.into_iter().peekable();
    for r in 0..grid.n_rows {
        out.push_str("<tr>");
        while let Some(c) = it.next_if(|c| c.row == r) {
            out.push_str("<td");
            if c.row_span > 1 {
                let _ = write!(out, " rowspan=\"{}\"", c.row_span);
            }
            if c.col_span > 1 {
                let _ = write!(out, " colspan=\"{}\"", c.col_span);
            }
            out.push('>');
            escape_into(&mut out, &c.text);
            out.push_str("</td>");
        }
        out.push_str("</tr>");
    }
    out.push_str("</table>");
    out
}

fn escape_into(out: &mut String, text: &str) {
    for ch in text.chars() {
        match ch {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            _ => out.push(ch),
        }
    }
}
