from setuptools import setup, find_packages

setup(
    name='iptv-qoslab',
    version='0.3.0',
    description='IPTV QoS lab - RTP/MPEG-TS stream generation, impairment and QoS measurement',
    license='Apache-2.0',
    packages=find_packages(exclude=['tests', 'tests.*']),
    install_requires=[
        'lark>=1.1.0',
        'pyyaml>=6.0',
        'jsonschema>=4.0',
        'numpy>=1.22',
        'dpkt>=1.9',
        'pandas>=1.5',
    ],
    extras_require={
        'test': [
            'pytest>=7.0',
        ],
    },
    entry_points={
        'console_scripts': [
            'qoslab=tools.qoslab.cli:main',
        ],
    },
    package_data={
        'tools.qoslab': [
            'netem.lark',
        ],
    },
    data_files=[
        ('schema', ['schema/experiment.schema.json']),
        ('configs', ['configs/paper-iv.yaml']),
    ],
    python_requires='>=3.8',
)
