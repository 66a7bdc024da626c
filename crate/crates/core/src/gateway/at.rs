//! GSM modem over a serial line, text-mode AT commands.
//!
//! ```text
//! -> AT+CMGF=1\r                 <- OK
//! -> AT+CMGS="+60123456789"\r    <- "> "
//! -> smslink123456\x1A           <- +CMGS: 12 / OK
//! -> AT+CMGL="ALL"\r             <- +CMGL: 3,"REC UNREAD","+6012...",,"24/06/01,08:00:00+32"
//!                                   <body>
//!                                   OK
//! -> AT+CMGD=3\r                 <- OK
//! ```

use std::io::{ErrorKind, Read, Write};
use std::sync::Arc;

use super::{check_body, InboundSms, OutboundSms, TransportError, TransportPort};
use crate::clock::Clock;

const CTRL_Z: u8 = 0x1A;

pub struct AtModem<P> {
    port: P,
    clock: Arc<dyn Clock>,
    initialized: bool,
}

fn io_err(e: std::io::Error) -> TransportError {
    TransportError::Unavailable(e.to_string())
}

impl<P: Read + Write + Send> AtModem<P> {
    pub fn new(port: P, clock: Arc<dyn Clock>) -> Self {
        Self {
            port,
            clock,
            initialized: false,
        }
    }

    pub fn into_inner(self) -> P {
        self.port
    }

    fn write_all(&mut self, bytes: &[u8]) -> Result<(), TransportError> {
        self.port.write_all(bytes).map_err(io_err)?;
        self.port.flush().map_err(io_err)
    }

    fn read_byte(&mut self) -> Result<u8, TransportError> {
        let mut b = [0u8];
        loop {
            match self.port.read(&mut b) {
                Ok(0) => return Err(TransportError::Unavailable("modem closed the line".into())),
                Ok(_) => return Ok(b[0]),
                Err(e) if e.kind() == ErrorKind::Interrupted => continue,
                Err(e) => return Err(io_err(e)),
            }
        }
    }

    /// Next non-empty line, without the line terminator.
    fn read_line(&mut self) -> Result<String, TransportError> {
        let mut buf = Vec::new();
        loop {
            match self.read_byte()? {
                b'\n' => {
                    while buf.last() == Some(&b'\r') {
                        buf.pop();
                    }
                    if !buf.is_empty() {
                        return Ok(String::from_utf8_lossy(&buf).into_owned());
                    }
                }
                b => buf.push(b),
            }
        }
    }

    /// Lines up to the final result code. Errors on ERROR / +CMS ERROR.
    fn read_response(&mut self) -> Result<Vec<String>, TransportError> {
        let mut lines = Vec::new();
        loop {
            let line = self.read_line()?;
            match line.as_str() {
                "OK" => return Ok(lines),
                "ERROR" => return Err(TransportError::Protocol("ERROR".into())),
                l if l.starts_with("+CMS ERROR") || l.starts_with("+CME ERROR") => {
                    return Err(TransportError::Protocol(l.to_owned()))
                }
                _ => lines.push(line),
            }
        }
    }

    fn command(&mut self, cmd: &str) -> Result<Vec<String>, TransportError> {
        self.write_all(format!("{cmd}\r").as_bytes())?;
        let mut lines = self.read_response()?;
        // drop the command echo when ATE1 is on
        if lines.first().map(String::as_str) == Some(cmd) {
            lines.remove(0);
        }
        Ok(lines)
    }

    fn ensure_text_mode(&mut self) -> Result<(), TransportError> {
        if !self.initialized {
            self.command("AT+CMGF=1")?;
            self.initialized = true;
        }
        Ok(())
    }

    fn wait_for_prompt(&mut self) -> Result<(), TransportError> {
        let mut line = Vec::new();
        loop {
            let b = self.read_byte()?;
            if b == b'\n' {
                let text = String::from_utf8_lossy(&line).trim().to_owned();
                if text == "ERROR" || text.starts_with("+CMS ERROR") {
                    return Err(TransportError::Protocol(text));
                }
                line.clear();
                continue;
            }
            line.push(b);
            if line.ends_with(b"> ") {
                return Ok(());
            }
        }
    }
}

impl<P: Read + Write + Send> TransportPort for AtModem<P> {
    fn send(&mut self, sms: &OutboundSms) -> Result<(), TransportError> {
        check_body(&sms.body)?;
        if sms.body.contains(char::from(CTRL_Z)) || sms.to.contains('"') {
            return Err(TransportError::Protocol("body or number contains a reserved character".into()));
        }
        self.ensure_text_mode()?;
        self.write_all(format!("AT+CMGS=\"{}\"\r", sms.to).as_bytes())?;
        self.wait_for_prompt()?;
        let mut payload = sms.body.as_bytes().to_vec();
        payload.push(CTRL_Z);
        self.write_all(&payload)?;
        let lines = self.read_response()?;
        if !lines.iter().any(|l| l.starts_with("+CMGS:")) {
            return Err(TransportError::Protocol("missing +CMGS reference".into()));
        }
        Ok(())
    }

    fn poll(&mut self) -> Result<Vec<InboundSms>, TransportError> {
        self.ensure_text_mode()?;
        let lines = self.command("AT+CMGL=\"ALL\"")?;
        let now = self.clock.now();
        let mut out = Vec::new();
        let mut indices = Vec::new();
        let mut current: Option<(u32, String, Vec<String>)> = None;
        for line in lines {
            if let Some(header) = line.strip_prefix("+CMGL:") {
                if let Some((index, from, body)) = current.take() {
                    indices.push(index);
                    out.push(InboundSms { from, body: body.join("\n"), received_at: now });
                }
                let fields = split_quoted(header);
                let index = fields
                    .first()
                    .and_then(|f| f.trim().parse().ok())
                    .ok_or_else(|| TransportError::Protocol(format!("bad +CMGL header {line:?}")))?;
                let from = fields.get(2).cloned().unwrap_or_default();
                current = Some((index, from, Vec::new()));
            } else if let Some((_, _, body)) = current.as_mut() {
                body.push(line);
            }
        }
        if let Some((index, from, body)) = current.take() {
            indices.push(index);
            out.push(InboundSms { from, body: body.join("\n"), received_at: now });
        }
        for index in indices {
            self.command(&format!("AT+CMGD={index}"))?;
        }
        Ok(out)
    }
}

/// Split a comma list where quoted fields may contain commas. Quotes are
/// stripped.
fn split_quoted(s: &str) -> Vec<String> {
    let mut fields = Vec::new();
    let mut cur = String::new();
    let mut quoted = false;
    for c in s.chars() {
        match c {
            '"' => quoted = !quoted,
            ',' if !quoted => fields.push(std::mem::take(&mut cur)),
            _ => cur.push(c),
        }
    }
    fields.push(cur);
    fields.into_iter().map(|f| f.trim().to_owned()).collect()
}
