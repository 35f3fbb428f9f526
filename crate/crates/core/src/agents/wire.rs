//! Lockstep frame protocol for out-of-process agents.
//!
//! Every message is a 10-byte little-endian header (magic `DPLX`, version
//! u8, type u8, payload length u32) followed by the payload. The harness
//! opens with HELLO and the server acknowledges with its own HELLO; each
//! session is then PROMPT, one OUT reply per FRAME, and END acknowledged by
//! END. A server reports failures with an ERROR message before closing.

use std::io::{self, Read, Write};
use std::net::{TcpListener, TcpStream, ToSocketAddrs};
use std::ops::Range;
use std::time::Duration;

use crate::audio::{AudioBuffer, FrameClock};
use crate::error::{Error, Result};
use crate::prompt::{HybridPrompt, SegmentOrder};
use crate::stream::{StreamSet, TextToken, TokenFrame};
use crate::text::Vocabulary;

use super::{AgentFrameIn, AgentFrameOut, AgentSession, DuplexAgent};

pub const MAGIC: [u8; 4] = *b"DPLX";
pub const VERSION: u8 = 1;
pub const HEADER_LEN: usize = 10;
/// Upper bound on a single payload; larger lengths are treated as corrupt.
pub const MAX_PAYLOAD: u32 = 64 << 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum MsgType {
    Hello = 1,
    Prompt = 2,
    Frame = 3,
    Out = 4,
    End = 5,
    Error = 6,
}

impl MsgType {
    fn from_u8(v: u8) -> Option<Self> {
        Some(match v {
            1 => Self::Hello,
            2 => Self::Prompt,
            3 => Self::Frame,
            4 => Self::Out,
            5 => Self::End,
            6 => Self::Error,
            _ => return None,
        })
    }
}

/// Negotiated stream parameters carried by HELLO.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WireConfig {
    pub clock: FrameClock,
    pub codebooks: u32,
}

impl Default for WireConfig {
    fn default() -> Self {
        Self {
            clock: FrameClock::default(),
            codebooks: crate::codec::DEFAULT_CODEBOOKS as u32,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Message {
    Hello {
        sample_rate: u32,
        frame_rate: f32,
        codebooks: u32,
    },
    Prompt(HybridPrompt),
    Frame(AgentFrameIn),
    Out(AgentFrameOut),
    End,
    Error(String),
}

impl Message {
    pub fn hello(config: &WireConfig) -> Self {
        Message::Hello {
            sample_rate: config.clock.sample_rate(),
            frame_rate: config.clock.frame_rate() as f32,
            codebooks: config.codebooks,
        }
    }

    pub fn kind(&self) -> MsgType {
        match self {
            Message::Hello { .. } => MsgType::Hello,
            Message::Prompt(_) => MsgType::Prompt,
            Message::Frame(_) => MsgType::Frame,
            Message::Out(_) => MsgType::Out,
            Message::End => MsgType::End,
            Message::Error(_) => MsgType::Error,
        }
    }
}

fn put_u32(buf: &mut Vec<u8>, v: u32) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn put_pcm(buf: &mut Vec<u8>, pcm: &[i16]) {
    for s in pcm {
        buf.extend_from_slice(&s.to_le_bytes());
    }
}

fn put_range(buf: &mut Vec<u8>, r: &Range<usize>) {
    put_u32(buf, r.start as u32);
    put_u32(buf, r.end as u32);
}

/// Serializes one message, header included.
pub fn encode(msg: &Message) -> Vec<u8> {
    let mut p = Vec::new();
    match msg {
        Message::Hello {
            sample_rate,
            frame_rate,
            codebooks,
        } => {
            put_u32(&mut p, *sample_rate);
            p.extend_from_slice(&frame_rate.to_le_bytes());
            put_u32(&mut p, *codebooks);
        }
        Message::Prompt(prompt) => encode_prompt(&mut p, prompt),
        Message::Frame(f) => {
            put_u32(&mut p, f.frame_index);
            put_pcm(&mut p, &f.pcm);
        }
        Message::Out(o) => {
            put_pcm(&mut p, &o.pcm);
            p.extend_from_slice(&o.text.to_wire().to_le_bytes());
        }
        Message::End => {}
        Message::Error(text) => p.extend_from_slice(text.as_bytes()),
    }
    let mut out = Vec::with_capacity(HEADER_LEN + p.len());
    out.extend_from_slice(&MAGIC);
    out.push(VERSION);
    out.push(msg.kind() as u8);
    put_u32(&mut out, p.len() as u32);
    out.extend_from_slice(&p);
    out
}

// PROMPT payload: n_frames u32, voice span (u32, u32), text span (u32, u32),
// delimiter frame u32, prefill boundary u32, order u8 (0 voice-first,
// 1 text-first), delimiter text id u32, delimiter audio id u32, then per
// frame: user PCM, agent PCM, text i32, K audio ids u32.
fn encode_prompt(p: &mut Vec<u8>, prompt: &HybridPrompt) {
    let s = &prompt.stream;
    let clock = s.clock();
    put_u32(p, s.len() as u32);
    put_range(p, &prompt.voice_span);
    put_range(p, &prompt.text_span);
    put_u32(p, prompt.delimiter_frame as u32);
    put_u32(p, prompt.prefill_boundary as u32);
    p.push(match prompt.order {
        SegmentOrder::VoiceFirst => 0,
        SegmentOrder::TextFirst => 1,
    });
    put_u32(p, prompt.delimiter_text_id);
    put_u32(p, prompt.delimiter_audio_id);
    for (i, f) in s.agent_frames().iter().enumerate() {
        put_pcm(p, s.user_audio().frame(clock, i));
        put_pcm(p, s.agent_audio().frame(clock, i));
        p.extend_from_slice(&f.text.to_wire().to_le_bytes());
        for &a in &f.audio {
            put_u32(p, a);
        }
    }
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Protocol(format!(
                "payload ends early: needed {} more bytes at offset {}, {} remain",
                n,
                self.pos,
                self.buf.len() - self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    fn i32(&mut self) -> Result<i32> {
        Ok(i32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    fn pcm(&mut self, n: usize) -> Result<Vec<i16>> {
        Ok(self
            .take(2 * n)?
            .chunks_exact(2)
            .map(|c| i16::from_le_bytes([c[0], c[1]]))
            .collect())
    }

    fn range(&mut self) -> Result<Range<usize>> {
        Ok(self.u32()? as usize..self.u32()? as usize)
    }
}

fn expect_len(kind: &str, expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::Protocol(format!(
            "{kind} payload length mismatch: expected {expected} bytes, received {got}"
        )));
    }
    Ok(())
}

/// Decodes a payload. `config` supplies the frame size and codebook count
/// negotiated at handshake; HELLO and ERROR decode without it.
pub fn decode_payload(
    kind: MsgType,
    payload: &[u8],
    config: Option<&WireConfig>,
) -> Result<Message> {
    let need =
        || config.ok_or_else(|| Error::Protocol(format!("{kind:?} received before the handshake")));
    let mut c = Cursor {
        buf: payload,
        pos: 0,
    };
    let msg = match kind {
        MsgType::Hello => {
            expect_len("HELLO", 12, payload.len())?;
            Message::Hello {
                sample_rate: c.u32()?,
                frame_rate: c.f32()?,
                codebooks: c.u32()?,
            }
        }
        MsgType::Frame => {
            let spf = need()?.clock.samples_per_frame();
            expect_len("FRAME", 4 + 2 * spf, payload.len())?;
            Message::Frame(AgentFrameIn {
                frame_index: c.u32()?,
                pcm: c.pcm(spf)?,
            })
        }
        MsgType::Out => {
            let spf = need()?.clock.samples_per_frame();
            expect_len("OUT", 2 * spf + 4, payload.len())?;
            Message::Out(AgentFrameOut {
                pcm: c.pcm(spf)?,
                text: TextToken::from_wire(c.i32()?),
            })
        }
        MsgType::End => {
            expect_len("END", 0, payload.len())?;
            Message::End
        }
        MsgType::Error => Message::Error(String::from_utf8_lossy(payload).into_owned()),
        MsgType::Prompt => {
            let cfg = need()?;
            Message::Prompt(decode_prompt(&mut c, cfg)?)
        }
    };
    Ok(msg)
}

fn decode_prompt(c: &mut Cursor<'_>, cfg: &WireConfig) -> Result<HybridPrompt> {
    let spf = cfg.clock.samples_per_frame();
    let k = cfg.codebooks as usize;
    let n = c.u32()? as usize;
    let voice_span = c.range()?;
    let text_span = c.range()?;
    let delimiter_frame = c.u32()? as usize;
    let prefill_boundary = c.u32()? as usize;
    let order = match c.u8()? {
        0 => SegmentOrder::VoiceFirst,
        1 => SegmentOrder::TextFirst,
        v => return Err(Error::Protocol(format!("unknown segment order {v}"))),
    };
    let delimiter_text_id = c.u32()?;
    let delimiter_audio_id = c.u32()?;
    let per_frame = 4 * spf + 4 + 4 * k;
    let expected = c.pos + n * per_frame;
    expect_len("PROMPT", expected, c.buf.len())?;
    let mut user = Vec::with_capacity(n * spf);
    let mut agent = Vec::with_capacity(n * spf);
    let mut frames = Vec::with_capacity(n);
    for _ in 0..n {
        user.extend(c.pcm(spf)?);
        agent.extend(c.pcm(spf)?);
        let text = TextToken::from_wire(c.i32()?);
        let audio = (0..k).map(|_| c.u32()).collect::<Result<Vec<_>>>()?;
        frames.push(TokenFrame::new(text, audio));
    }
    let sr = cfg.clock.sample_rate();
    let stream = StreamSet::new(
        AudioBuffer::new(user, sr)?,
        AudioBuffer::new(agent, sr)?,
        frames,
        cfg.clock,
        k,
    )
    .map_err(|e| Error::Protocol(format!("PROMPT stream is inconsistent: {e}")))?;
    let spans_ok = voice_span.end <= n && text_span.end <= n && delimiter_frame < n.max(1);
    if !spans_ok {
        return Err(Error::Protocol(
            "PROMPT spans fall outside the stream".into(),
        ));
    }
    Ok(HybridPrompt {
        stream,
        voice_span,
        text_span,
        delimiter_frame,
        prefill_boundary,
        order,
        delimiter_text_id,
        delimiter_audio_id,
    })
}

fn io_to_transport(e: io::Error, frame: Option<u32>) -> Error {
    let message = match e.kind() {
        io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut => {
            "timed out waiting for the peer".into()
        }
        io::ErrorKind::UnexpectedEof => "connection closed by the peer".into(),
        _ => e.to_string(),
    };
    Error::Transport { frame, message }
}

/// Reads one message. Returns `Ok(None)` on a clean close before any byte
/// of a new header.
pub fn read_message<R: Read>(
    r: &mut R,
    config: Option<&WireConfig>,
    frame: Option<u32>,
) -> Result<Option<Message>> {
    let mut header = [0u8; HEADER_LEN];
    let mut got = 0;
    while got < HEADER_LEN {
        match r.read(&mut header[got..]) {
            Ok(0) if got == 0 => return Ok(None),
            Ok(0) => return Err(io_to_transport(io::ErrorKind::UnexpectedEof.into(), frame)),
            Ok(n) => got += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(io_to_transport(e, frame)),
        }
    }
    if header[..4] != MAGIC {
        return Err(Error::Handshake(format!("bad magic {:02x?}", &header[..4])));
    }
    if header[4] != VERSION {
        return Err(Error::Handshake(format!(
            "unsupported protocol version {} (expected {VERSION})",
            header[4]
        )));
    }
    let kind = MsgType::from_u8(header[5])
        .ok_or_else(|| Error::Protocol(format!("unknown message type {}", header[5])))?;
    let len = u32::from_le_bytes(header[6..10].try_into().expect("4 bytes"));
    if len > MAX_PAYLOAD {
        return Err(Error::Protocol(format!(
            "payload of {len} bytes exceeds the limit"
        )));
    }
    let mut payload = vec![0u8; len as usize];
    r.read_exact(&mut payload)
        .map_err(|e| io_to_transport(e, frame))?;
    decode_payload(kind, &payload, config).map(Some)
}

pub fn write_message<W: Write>(w: &mut W, msg: &Message, frame: Option<u32>) -> Result<()> {
    w.write_all(&encode(msg))
        .and_then(|_| w.flush())
        .map_err(|e| io_to_transport(e, frame))
}

fn check_hello(msg: Message, expected: &WireConfig) -> Result<()> {
    match msg {
        Message::Hello {
            sample_rate,
            frame_rate,
            codebooks,
        } => {
            let want_rate = expected.clock.frame_rate() as f32;
            if sample_rate != expected.clock.sample_rate()
                || frame_rate != want_rate
                || codebooks != expected.codebooks
            {
                return Err(Error::Handshake(format!(
                    "peer offers {sample_rate} Hz / {frame_rate} Hz frames / K={codebooks}, expected {} Hz / {want_rate} Hz frames / K={}",
                    expected.clock.sample_rate(),
                    expected.codebooks
                )));
            }
            Ok(())
        }
        Message::Error(text) => Err(Error::Handshake(format!("peer refused: {text}"))),
        other => Err(Error::Handshake(format!(
            "expected HELLO, got {:?}",
            other.kind()
        ))),
    }
}

/// Summary of a served connection.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ServeStats {
    pub sessions: usize,
    pub frames: u64,
}

/// Serves `agent` over a byte stream until the client closes it. Each
/// PROMPT..END block is one session; failures are reported to the client
/// with an ERROR message and returned.
pub fn serve_wire<A, S>(agent: A, config: WireConfig, mut stream: S) -> Result<ServeStats>
where
    A: DuplexAgent,
    S: Read + Write,
{
    let result = serve_inner(agent, &config, &mut stream);
    if let Err(e) = &result {
        if !matches!(e, Error::Transport { .. }) {
            let _ = write_message(&mut stream, &Message::Error(e.to_string()), None);
        }
    }
    result
}

fn serve_inner<A: DuplexAgent, S: Read + Write>(
    agent: A,
    config: &WireConfig,
    stream: &mut S,
) -> Result<ServeStats> {
    let hello = read_message(stream, None, None)?
        .ok_or_else(|| Error::Handshake("connection closed before HELLO".into()))?;
    check_hello(hello, config)?;
    write_message(stream, &Message::hello(config), None)?;

    let mut stats = ServeStats::default();
    let mut session = AgentSession::new(agent, config.clock);
    loop {
        let frame = Some(session.frames_stepped());
        let Some(msg) = read_message(stream, Some(config), frame)? else {
            return Ok(stats);
        };
        match msg {
            Message::Prompt(prompt) => session.begin(&prompt)?,
            Message::Frame(f) => {
                let index = f.frame_index;
                let out = session.step(&f)?;
                write_message(stream, &Message::Out(out), Some(index))?;
                stats.frames += 1;
            }
            Message::End => {
                session.end()?;
                write_message(stream, &Message::End, frame)?;
                stats.sessions += 1;
                session = AgentSession::new(session.into_agent(), config.clock);
            }
            Message::Hello { .. } => {
                return Err(Error::Protocol("HELLO repeated after handshake".into()))
            }
            Message::Out(_) => return Err(Error::Protocol("OUT is not a client message".into())),
            Message::Error(text) => {
                return Err(Error::Protocol(format!("client reported: {text}")))
            }
        }
    }
}

/// Client side of the protocol, usable wherever an in-process agent is.
pub struct RemoteAgent<S: Read + Write + Send> {
    stream: S,
    config: WireConfig,
    vocabulary: Option<Vocabulary>,
    name: String,
}

/// Performs the handshake over an established byte stream.
pub fn connect_wire<S: Read + Write + Send>(
    mut stream: S,
    config: WireConfig,
) -> Result<RemoteAgent<S>> {
    write_message(&mut stream, &Message::hello(&config), None)?;
    let reply = read_message(&mut stream, None, None)?.ok_or_else(|| {
        Error::Handshake("server closed the connection during the handshake".into())
    })?;
    check_hello(reply, &config)?;
    Ok(RemoteAgent {
        stream,
        config,
        vocabulary: None,
        name: "remote".into(),
    })
}

impl RemoteAgent<TcpStream> {
    /// Connects over TCP; `timeout` bounds every read and write.
    pub fn connect_tcp(
        addr: impl ToSocketAddrs,
        config: WireConfig,
        timeout: Option<Duration>,
    ) -> Result<Self> {
        let stream = TcpStream::connect(addr).map_err(|e| io_to_transport(e, None))?;
        stream
            .set_nodelay(true)
            .map_err(|e| io_to_transport(e, None))?;
        stream
            .set_read_timeout(timeout)
            .map_err(|e| io_to_transport(e, None))?;
        stream
            .set_write_timeout(timeout)
            .map_err(|e| io_to_transport(e, None))?;
        connect_wire(stream, config)
    }
}

impl<S: Read + Write + Send> RemoteAgent<S> {
    /// Attaches the agent-supplied id-to-string mapping.
    pub fn with_vocabulary(mut self, vocabulary: Vocabulary) -> Self {
        self.vocabulary = Some(vocabulary);
        self
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn config(&self) -> &WireConfig {
        &self.config
    }

    fn expect_reply(&mut self, frame: Option<u32>) -> Result<Message> {
        match read_message(&mut self.stream, Some(&self.config), frame)? {
            Some(Message::Error(text)) => Err(Error::Protocol(format!("remote agent: {text}"))),
            Some(m) => Ok(m),
            None => Err(Error::Transport {
                frame,
                message: "connection closed by the peer".into(),
            }),
        }
    }
}

impl<S: Read + Write + Send> DuplexAgent for RemoteAgent<S> {
    fn name(&self) -> &str {
        &self.name
    }

    fn begin(&mut self, prompt: &HybridPrompt) -> Result<()> {
        if prompt.stream.codebooks() != self.config.codebooks as usize {
            return Err(Error::Protocol(format!(
                "prompt has {} codebooks, the connection negotiated {}",
                prompt.stream.codebooks(),
                self.config.codebooks
            )));
        }
        write_message(&mut self.stream, &Message::Prompt(prompt.clone()), None)
    }

    fn step(&mut self, frame: &AgentFrameIn) -> Result<AgentFrameOut> {
        let index = Some(frame.frame_index);
        write_message(&mut self.stream, &Message::Frame(frame.clone()), index)?;
        match self.expect_reply(index)? {
            Message::Out(out) => Ok(out),
            other => Err(Error::Protocol(format!(
                "expected OUT, got {:?}",
                other.kind()
            ))),
        }
    }

    fn end(&mut self) -> Result<()> {
        write_message(&mut self.stream, &Message::End, None)?;
        match self.expect_reply(None)? {
            Message::End => Ok(()),
            other => Err(Error::Protocol(format!(
                "expected END, got {:?}",
                other.kind()
            ))),
        }
    }

    fn vocabulary(&self) -> Option<&Vocabulary> {
        self.vocabulary.as_ref()
    }
}

/// Accepts TCP connections and serves each on its own thread with a fresh
/// agent. Stops after `max_connections` when given.
pub fn serve_tcp<F, A>(
    listener: TcpListener,
    config: WireConfig,
    make_agent: F,
    max_connections: Option<usize>,
) -> Result<()>
where
    F: Fn() -> Result<A> + Send + Sync + 'static,
    A: DuplexAgent + 'static,
{
    let make_agent = std::sync::Arc::new(make_agent);
    let mut handles = Vec::new();
    for (n, conn) in listener.incoming().enumerate() {
        let stream = conn?;
        stream.set_nodelay(true)?;
        let make_agent = make_agent.clone();
        handles.push(std::thread::spawn(move || -> Result<ServeStats> {
            serve_wire(make_agent()?, config, stream)
        }));
        if max_connections.is_some_and(|m| n + 1 >= m) {
            break;
        }
    }
    for h in handles {
        let _ = h.join();
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::tests::tiny_prompt;

    #[test]
    fn hello_bytes_are_exact() {
        let bytes = encode(&Message::hello(&WireConfig::default()));
        let mut want = b"DPLX".to_vec();
        want.extend([1, 1, 12, 0, 0, 0]);
        want.extend(24000u32.to_le_bytes());
        want.extend(12.5f32.to_le_bytes());
        want.extend(8u32.to_le_bytes());
        assert_eq!(bytes, want);
    }

    #[test]
    fn round_trip_every_message() {
        let cfg = WireConfig::default();
        let msgs = [
            Message::hello(&cfg),
            Message::Prompt(tiny_prompt()),
            Message::Frame(AgentFrameIn {
                frame_index: 7,
                pcm: (0..1920).map(|i| (i * 17 - 9000) as i16).collect(),
            }),
            Message::Out(AgentFrameOut {
                pcm: vec![-3; 1920],
                text: TextToken::Id(31999),
            }),
            Message::Out(AgentFrameOut::silent(1920)),
            Message::End,
            Message::Error("boom".into()),
        ];
        for m in msgs {
            let bytes = encode(&m);
            let back = read_message(&mut bytes.as_slice(), Some(&cfg), None)
                .unwrap()
                .unwrap();
            assert_eq!(back, m);
        }
    }

    #[test]
    fn out_encodes_pad_as_minus_one() {
        let bytes = encode(&Message::Out(AgentFrameOut::silent(1920)));
        assert_eq!(&bytes[bytes.len() - 4..], &(-1i32).to_le_bytes());
    }

    #[test]
    fn malformed_headers() {
        let cfg = WireConfig::default();
        let mut bytes = encode(&Message::End);
        bytes[0] = b'X';
        assert!(matches!(
            read_message(&mut bytes.as_slice(), Some(&cfg), None),
            Err(Error::Handshake(_))
        ));
        let mut bytes = encode(&Message::End);
        bytes[4] = 2;
        assert!(matches!(
            read_message(&mut bytes.as_slice(), Some(&cfg), None),
            Err(Error::Handshake(_))
        ));
        let mut bytes = encode(&Message::End);
        bytes[5] = 42;
        assert!(matches!(
            read_message(&mut bytes.as_slice(), Some(&cfg), None),
            Err(Error::Protocol(_))
        ));
    }

    #[test]
    fn truncated_frame_names_both_lengths() {
        let cfg = WireConfig::default();
        let mut bytes = encode(&Message::Frame(AgentFrameIn {
            frame_index: 0,
            pcm: vec![0; 1000],
        }));
        let err = read_message(&mut bytes.as_slice(), Some(&cfg), None).unwrap_err();
        let text = err.to_string();
        assert!(matches!(err, Error::Protocol(_)));
        assert!(
            text.contains("expected 3844") && text.contains("received 2004"),
            "{text}"
        );
        // header promising more bytes than arrive is a transport failure
        bytes.truncate(200);
        let err = read_message(&mut bytes.as_slice(), Some(&cfg), Some(3)).unwrap_err();
        assert!(
            matches!(err, Error::Transport { frame: Some(3), .. }),
            "{err}"
        );
    }

    #[test]
    fn clean_close_is_not_an_error() {
        let empty: &[u8] = &[];
        assert!(read_message(&mut &*empty, None, None).unwrap().is_none());
    }
}
