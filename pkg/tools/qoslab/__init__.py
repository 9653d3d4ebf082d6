"""
IPTV QoS lab: RTP/MPEG-TS stream generation, a seeded impairment channel,
pcap and live UDP capture, and rate/delay/jitter/loss/PER analysis.
"""

__version__ = "0.3.0"
